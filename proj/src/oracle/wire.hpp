#pragma once

// Socket helpers shared by the oracle client and server.

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

namespace gamin::oracle::wire {

inline constexpr const char* kProtocol = "GAMIN-ORACLE/1";
inline constexpr std::size_t kMaxHeader = 256;

// All return false when the peer closed or the call failed.
bool write_all(int fd, const void* data, std::size_t size);
bool read_exact(int fd, void* data, std::size_t size);

// Reads up to and excluding '\n'. Empty optional on EOF/error, or when the
// line exceeds kMaxHeader bytes (`too_long` is then set).
std::optional<std::string> read_line(int fd, bool* too_long = nullptr);

// Parses "key=<unsigned>" tokens; returns nullopt on any mismatch.
std::optional<std::size_t> parse_field(const std::string& token, const char* key);

void close_fd(int fd);

}  // namespace gamin::oracle::wire
