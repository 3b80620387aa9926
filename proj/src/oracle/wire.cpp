#include "wire.hpp"

#include <cerrno>
#include <charconv>
#include <cstring>

#include <sys/socket.h>
#include <unistd.h>

namespace gamin::oracle::wire {

bool write_all(int fd, const void* data, std::size_t size) {
  const char* p = static_cast<const char*>(data);
  while (size > 0) {
    const ssize_t n = ::send(fd, p, size, MSG_NOSIGNAL);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    p += n;
    size -= static_cast<std::size_t>(n);
  }
  return true;
}

bool read_exact(int fd, void* data, std::size_t size) {
  char* p = static_cast<char*>(data);
  while (size > 0) {
    const ssize_t n = ::recv(fd, p, size, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) return false;
    p += n;
    size -= static_cast<std::size_t>(n);
  }
  return true;
}

std::optional<std::string> read_line(int fd, bool* too_long) {
  std::string line;
  if (too_long) *too_long = false;
  char c = 0;
  while (true) {
    if (!read_exact(fd, &c, 1)) return std::nullopt;
    if (c == '\n') return line;
    if (line.size() >= kMaxHeader) {
      if (too_long) *too_long = true;
      return std::nullopt;
    }
    line.push_back(c);
  }
}

std::optional<std::size_t> parse_field(const std::string& token, const char* key) {
  const std::size_t klen = std::strlen(key);
  if (token.size() <= klen + 1 || token.compare(0, klen, key) != 0 || token[klen] != '=') return std::nullopt;
  std::size_t value = 0;
  const char* first = token.data() + klen + 1;
  const char* last = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) return std::nullopt;
  return value;
}

void close_fd(int fd) {
  if (fd >= 0) ::close(fd);
}

}  // namespace gamin::oracle::wire
