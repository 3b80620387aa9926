#include <algorithm>
#include <cmath>
#include <complex>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <numbers>
#include <random>

#include "doctest.h"
#include "gamin/data/image_io.hpp"
#include "gamin/postproc/postproc.hpp"

using namespace gamin;
using namespace gamin::postproc;
using nn::Activation;
using nn::LayerSpec;
using cplx = std::complex<double>;

namespace {

nn::Tensor random_batch(nn::Shape shape, std::uint64_t seed) {
  nn::Rng rng(seed);
  std::uniform_real_distribution<float> u(-1.0f, 1.0f);
  nn::Tensor t(std::move(shape));
  for (float& v : t.values()) v = u(rng);
  return t;
}

// Textbook O(h^2 w^2) transform of one plane.
std::vector<cplx> naive_dft(const float* x, std::size_t h, std::size_t w, bool inverse = false,
                            const std::vector<cplx>* freq = nullptr) {
  std::vector<cplx> out(h * w);
  const double sign = inverse ? 1.0 : -1.0;
  for (std::size_t u = 0; u < h; ++u) {
    for (std::size_t v = 0; v < w; ++v) {
      cplx acc = 0.0;
      for (std::size_t i = 0; i < h; ++i) {
        for (std::size_t j = 0; j < w; ++j) {
          const double angle = sign * 2.0 * std::numbers::pi * (double(u * i) / h + double(v * j) / w);
          const cplx value = freq ? (*freq)[i * w + j] : cplx(x[i * w + j], 0.0);
          acc += value * std::polar(1.0, angle);
        }
      }
      out[u * w + v] = inverse ? acc / double(h * w) : acc;
    }
  }
  return out;
}

std::size_t reflect101(long i, long n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return static_cast<std::size_t>(i);
}

// Direct 2D correlation with a square kernel and mirrored borders.
std::vector<double> correlate(const std::vector<double>& img, std::size_t h, std::size_t w,
                              const std::vector<double>& kernel, std::size_t k) {
  std::vector<double> out(h * w, 0.0);
  const long r = static_cast<long>(k / 2);
  for (long y = 0; y < long(h); ++y) {
    for (long x = 0; x < long(w); ++x) {
      double acc = 0.0;
      for (long dy = -r; dy <= r; ++dy) {
        for (long dx = -r; dx <= r; ++dx) {
          acc += kernel[(dy + r) * k + (dx + r)] * img[reflect101(y + dy, h) * w + reflect101(x + dx, w)];
        }
      }
      out[y * w + x] = acc;
    }
  }
  return out;
}

std::vector<double> gaussian_kernel(std::size_t k, double sigma) {
  std::vector<double> g(k);
  double sum = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    const double d = double(i) - double(k / 2);
    g[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += g[i];
  }
  std::vector<double> kernel(k * k);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) kernel[i * k + j] = g[i] * g[j] / (sum * sum);
  }
  return kernel;
}

nn::Model<float> toy_generator(std::size_t channels, std::uint64_t seed) {
  const std::size_t out = channels * 16 * 16;
  nn::ArchitectureSpec spec{{4}, out, {LayerSpec::dense(32, Activation::relu), LayerSpec::dense(out, Activation::tanh)}};
  return nn::make_model<float>(spec, seed);
}

std::string file_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

double max_abs_diff(const nn::Tensor& a, const nn::Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(double(a[i]) - double(b[i])));
  return worst;
}

}  // namespace

TEST_CASE("frequency round trip and degenerate threshold") {
  const auto batch = random_batch({5, 2, 28, 28}, 1);
  FrequencyMask all{28, 28, std::vector<std::vector<bool>>(2, std::vector<bool>(28 * 28, true))};
  CHECK(max_abs_diff(apply_frequency_mask(batch, all), batch) < 1e-5);

  ReconstructionConfig cfg;
  cfg.presence_threshold = 0.0;
  CHECK(max_abs_diff(common_frequency_filter(batch, cfg), batch) < 1e-5);
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

TEST_CASE("frequency vote against a direct transform") {
  const std::size_t n = 12, h = 6, w = 5;
  const auto batch = random_batch({n, 1, h, w}, 2);
  ReconstructionConfig cfg;
  cfg.presence_threshold = 0.5;

  std::vector<std::size_t> votes(h * w, 0);
  std::vector<std::vector<cplx>> spectra;
  for (std::size_t s = 0; s < n; ++s) {
    auto f = naive_dft(batch.data() + s * h * w, h, w);
    // |F(u, v)| = |F(-u, -v)| for real input; read each pair from one member
    std::vector<double> mag;
    for (std::size_t u = 0; u < h; ++u) {
      for (std::size_t v = 0; v < w; ++v) {
        const std::size_t b = u * w + v, twin = ((h - u) % h) * w + (w - v) % w;
        mag.push_back(std::abs(f[std::min(b, twin)]));
      }
    }
    auto sorted = mag;
    std::sort(sorted.begin(), sorted.end());
    const double median = sorted[(sorted.size() - 1) / 2];
    for (std::size_t b = 0; b < h * w; ++b) votes[b] += mag[b] > median ? 1 : 0;
    spectra.push_back(std::move(f));
  }
  const auto mask = common_frequency_mask(batch, cfg);
  std::size_t kept = 0;
  for (std::size_t b = 0; b < h * w; ++b) {
    CHECK(mask.keep[0][b] == (2 * votes[b] >= n));
    kept += mask.keep[0][b] ? 1 : 0;
  }
  CHECK(kept > 0);
  CHECK(kept < h * w);

  const auto filtered = apply_frequency_mask(batch, mask);
  for (std::size_t s = 0; s < n; ++s) {
    auto f = spectra[s];
    for (std::size_t b = 0; b < h * w; ++b) {
      if (!mask.keep[0][b]) f[b] = 0.0;
    }
    const auto back = naive_dft(nullptr, h, w, true, &f);
    for (std::size_t b = 0; b < h * w; ++b) CHECK(std::abs(back[b].real() - filtered[s * h * w + b]) < 1e-5);
  }
}

TEST_CASE("the mask is symmetric and shared across the batch") {
  const auto batch = random_batch({30, 1, 8, 8}, 3);
  ReconstructionConfig cfg;
  cfg.presence_threshold = 0.4;
  const auto mask = common_frequency_mask(batch, cfg);
  // conjugate bins have equal magnitude, so they vote together
  for (std::size_t u = 0; u < 8; ++u) {
    for (std::size_t v = 0; v < 8; ++v) {
      CHECK(mask.keep[0][u * 8 + v] == mask.keep[0][((8 - u) % 8) * 8 + (8 - v) % 8]);
    }
  }
  // filtering one sample alone with the batch mask matches its row in the batch result
  const auto full = apply_frequency_mask(batch, mask);
  const nn::Tensor one({1, 1, 8, 8}, std::vector<float>(batch.data() + 64 * 7, batch.data() + 64 * 8));
  const auto single = apply_frequency_mask(one, mask);
  for (std::size_t i = 0; i < 64; ++i) CHECK(single[i] == full[64 * 7 + i]);
}

TEST_CASE("median") {
  nn::Tensor three({3, 1, 1, 1}, std::vector<float>{0.0f, 1.0f, 0.0f});
  CHECK(pixel_median(three)[0] == 0.0f);
  nn::Tensor four({4, 1, 1, 1}, std::vector<float>{4.0f, 1.0f, 3.0f, 2.0f});
  CHECK(pixel_median(four)[0] == 2.0f);

  ReconstructionConfig cfg;
  const auto image = random_batch({1, 2, 10, 9}, 4);
  nn::Tensor copies({7, 2, 10, 9});
  for (std::size_t s = 0; s < 7; ++s) std::copy(image.values().begin(), image.values().end(), copies.data() + s * 180);
  const nn::Tensor chw({2, 10, 9}, std::vector<float>(image.values().begin(), image.values().end()));
  CHECK(reconstruct(copies, cfg) == transform_image(chw, cfg));

  const auto batch = random_batch({9, 1, 6, 6}, 5);
  const auto med = pixel_median(batch);
  for (std::size_t p = 0; p < 36; ++p) {
    float lo = 2.0f, hi = -2.0f;
    for (std::size_t s = 0; s < 9; ++s) {
      lo = std::min(lo, batch[s * 36 + p]);
      hi = std::max(hi, batch[s * 36 + p]);
    }
    CHECK(med[p] >= lo);
    CHECK(med[p] <= hi);
  }
}

TEST_CASE("blur and edge filters against direct convolution") {
  ReconstructionConfig cfg;
  cfg.edge = EdgeFilter::none;

  nn::Tensor impulse({1, 11, 11});
  impulse[5 * 11 + 5] = 1.0f;
  const auto blurred = transform_image(impulse, cfg);
  const auto kernel = gaussian_kernel(5, 1.0);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) CHECK(blurred[(3 + i) * 11 + 3 + j] == doctest::Approx(kernel[i * 5 + j]).epsilon(1e-6));
  }
  CHECK(blurred[0] == 0.0f);

  const auto image = random_batch({1, 9, 12}, 6);
  std::vector<double> img(image.values().begin(), image.values().end());
  const auto direct_blur = correlate(img, 9, 12, kernel, 5);
  const std::vector<double> laplace{0, 1, 0, 1, -4, 1, 0, 1, 0};
  const std::vector<double> sx{-1, 0, 1, -2, 0, 2, -1, 0, 1};
  const std::vector<double> sy{-1, -2, -1, 0, 0, 0, 1, 2, 1};
  const auto lap = correlate(direct_blur, 9, 12, laplace, 3);
  const auto gx = correlate(direct_blur, 9, 12, sx, 3);
  const auto gy = correlate(direct_blur, 9, 12, sy, 3);

  const nn::Tensor chw({1, 9, 12}, std::vector<float>(image.values().begin(), image.values().end()));
  const auto got_blur = transform_image(chw, cfg);
  cfg.edge = EdgeFilter::laplacian;
  const auto got_lap = transform_image(chw, cfg);
  cfg.edge = EdgeFilter::sobel;
  const auto got_sobel = transform_image(chw, cfg);
  for (std::size_t p = 0; p < 9 * 12; ++p) {
    CHECK(std::abs(got_blur[p] - direct_blur[p]) < 1e-5);
    CHECK(std::abs(got_lap[p] - std::abs(lap[p])) < 1e-5);
    CHECK(std::abs(got_sobel[p] - std::hypot(gx[p], gy[p])) < 1e-5);
  }
}

TEST_CASE("channels are processed independently") {
  auto a = random_batch({20, 3, 12, 12}, 7);
  auto b = a;
  const auto other = random_batch({20, 1, 12, 12}, 8);
  for (std::size_t s = 0; s < 20; ++s) {
    std::copy(other.data() + s * 144, other.data() + (s + 1) * 144, b.data() + (s * 3 + 2) * 144);
  }
  ReconstructionConfig cfg;
  cfg.presence_threshold = 0.6;
  const auto ra = reconstruct(common_frequency_filter(a, cfg), cfg);
  const auto rb = reconstruct(common_frequency_filter(b, cfg), cfg);
  for (std::size_t p = 0; p < 2 * 144; ++p) CHECK(ra[p] == rb[p]);
  bool third_differs = false;
  for (std::size_t p = 2 * 144; p < 3 * 144; ++p) third_differs |= ra[p] != rb[p];
  CHECK(third_differs);
}

TEST_CASE("pipeline determinism and shapes") {
  const auto gen = toy_generator(1, 9);
  CHECK(image_shape_for(784) == nn::Shape{1, 28, 28});
  CHECK(image_shape_for(3 * 32 * 32) == nn::Shape{3, 32, 32});
  CHECK_THROWS_AS(image_shape_for(10), ShapeError);

  const auto b1 = generate_batch(gen, 50, 3);
  CHECK(b1.shape() == nn::Shape{50, 1, 16, 16});
  CHECK(b1 == generate_batch(gen, 50, 3));
  CHECK_FALSE(b1 == generate_batch(gen, 50, 4));
  CHECK(std::all_of(b1.values().begin(), b1.values().end(), [](float v) { return v >= -1.0f && v <= 1.0f; }));

  ReconstructionConfig cfg;
  cfg.samples = 200;
  cfg.seed = 17;
  const auto dir = std::filesystem::temp_directory_path() / "gamin_postproc_test";
  data::write_png(dir / "a.png", postprocess(gen, cfg));
  data::write_png(dir / "b.png", postprocess(gen, cfg));
  CHECK(file_bytes(dir / "a.png") == file_bytes(dir / "b.png"));
  CHECK(file_bytes(dir / "a.png").size() > 0);

  write_raw_tensor(dir / "t.bin", b1);
  CHECK(read_raw_tensor(dir / "t.bin") == b1);
  std::filesystem::remove_all(dir);

  ReconstructionConfig plain = cfg;
  plain.frequency_filter = false;
  plain.blur_sigma = 0.0;
  plain.edge = EdgeFilter::none;
  CHECK(postprocess(gen, plain) == pixel_median(generate_batch(gen, 200, 17)));

  const auto colour = toy_generator(3, 10);
  CHECK(postprocess(colour, cfg).shape() == nn::Shape{3, 16, 16});
}

TEST_CASE("config validation") {
  ReconstructionConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.samples = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.presence_threshold = 1.5;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = {};
  cfg.blur_kernel = 4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  CHECK(parse_edge_filter("sobel") == EdgeFilter::sobel);
  CHECK_FALSE(parse_edge_filter("canny"));
}
