#include "afh/metrics.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <fstream>
#include <memory>
#include <numbers>
#include <sstream>

namespace afh {

namespace {

void require_same(const Image& a, const Image& b) {
  if (!a.same_shape(b)) {
    throw ShapeError("metric inputs differ in shape: " + std::to_string(a.height()) + "x" +
                     std::to_string(a.width()) + "x" + std::to_string(a.channels()) + " vs " +
                     std::to_string(b.height()) + "x" + std::to_string(b.width()) + "x" +
                     std::to_string(b.channels()));
  }
}

std::vector<double> luma_values(const Image& img, double scale) {
  const Image y = to_luminance(img);
  std::vector<double> out(y.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = y.data()[i] * scale;
  return out;
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  require_same(a, b);
  const auto ya = luma_values(a, 1.0);
  const auto yb = luma_values(b, 1.0);
  double sse = 0.0;
  for (std::size_t i = 0; i < ya.size(); ++i) {
    const double d = ya[i] - yb[i];
    sse += d * d;
  }
  const double mse = sse / static_cast<double>(ya.size());
  if (mse == 0.0) return kPsnrInfinity;
  return 10.0 * std::log10(1.0 / mse);
}

double ssim(const Image& a, const Image& b) {
  require_same(a, b);
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5;
  if (a.height() < kWin || a.width() < kWin) {
    throw ShapeError("SSIM needs images of at least 11x11");
  }
  const int h = a.height(), w = a.width();
  std::vector<double> g(kWin);
  double gsum = 0.0;
  for (int i = 0; i < kWin; ++i) {
    const double d = i - kWin / 2;
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    gsum += g[i];
  }
  for (double& v : g) v /= gsum;

  const auto x = luma_values(a, 1.0);
  const auto y = luma_values(b, 1.0);
  const int oh = h - kWin + 1, ow = w - kWin + 1;
  // Separable 'valid' Gaussian filtering of the five moment images.
  auto filter = [&](auto&& value) {
    std::vector<double> rows(static_cast<std::size_t>(h) * ow);
    for (int yy = 0; yy < h; ++yy)
      for (int xx = 0; xx < ow; ++xx) {
        double acc = 0.0;
        for (int k = 0; k < kWin; ++k) acc += g[k] * value(static_cast<std::size_t>(yy) * w + xx + k);
        rows[static_cast<std::size_t>(yy) * ow + xx] = acc;
      }
    std::vector<double> out(static_cast<std::size_t>(oh) * ow);
    for (int yy = 0; yy < oh; ++yy)
      for (int xx = 0; xx < ow; ++xx) {
        double acc = 0.0;
        for (int k = 0; k < kWin; ++k) acc += g[k] * rows[static_cast<std::size_t>(yy + k) * ow + xx];
        out[static_cast<std::size_t>(yy) * ow + xx] = acc;
      }
    return out;
  };
  const auto mu_x = filter([&](std::size_t i) { return x[i]; });
  const auto mu_y = filter([&](std::size_t i) { return y[i]; });
  const auto xx2 = filter([&](std::size_t i) { return x[i] * x[i]; });
  const auto yy2 = filter([&](std::size_t i) { return y[i] * y[i]; });
  const auto xy = filter([&](std::size_t i) { return x[i] * y[i]; });

  const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
  double total = 0.0;
  for (std::size_t i = 0; i < mu_x.size(); ++i) {
    const double mx = mu_x[i], my = mu_y[i];
    const double vx = xx2[i] - mx * mx;
    const double vy = yy2[i] - my * my;
    const double cxy = xy[i] - mx * my;
    total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) /
             ((mx * mx + my * my + c1) * (vx + vy + c2));
  }
  return total / static_cast<double>(mu_x.size());
}

namespace {

using cplx = std::complex<double>;

struct FftwBuffer {
  explicit FftwBuffer(std::size_t n)
      : ptr(static_cast<fftw_complex*>(fftw_malloc(sizeof(fftw_complex) * n))) {}
  ~FftwBuffer() { fftw_free(ptr); }
  FftwBuffer(const FftwBuffer&) = delete;
  FftwBuffer& operator=(const FftwBuffer&) = delete;
  cplx* data() { return reinterpret_cast<cplx*>(ptr); }
  fftw_complex* ptr;
};

class Fft2 {
 public:
  Fft2(int rows, int cols)
      : rows_(rows), cols_(cols), n_(static_cast<std::size_t>(rows) * cols), in_(n_), out_(n_) {
    forward_ = fftw_plan_dft_2d(rows, cols, in_.ptr, out_.ptr, FFTW_FORWARD, FFTW_ESTIMATE);
    inverse_ = fftw_plan_dft_2d(rows, cols, in_.ptr, out_.ptr, FFTW_BACKWARD, FFTW_ESTIMATE);
  }
  ~Fft2() {
    fftw_destroy_plan(forward_);
    fftw_destroy_plan(inverse_);
  }
  Fft2(const Fft2&) = delete;
  Fft2& operator=(const Fft2&) = delete;

  std::vector<cplx> forward(const std::vector<cplx>& x) { return run(forward_, x, 1.0); }
  /// Normalized inverse (divides by rows * cols).
  std::vector<cplx> inverse(const std::vector<cplx>& x) {
    return run(inverse_, x, 1.0 / static_cast<double>(n_));
  }

 private:
  std::vector<cplx> run(fftw_plan plan, const std::vector<cplx>& x, double scale) {
    std::copy(x.begin(), x.end(), in_.data());
    fftw_execute(plan);
    std::vector<cplx> y(out_.data(), out_.data() + n_);
    if (scale != 1.0) {
      for (cplx& v : y) v *= scale;
    }
    return y;
  }

  int rows_, cols_;
  std::size_t n_;
  FftwBuffer in_, out_;
  fftw_plan forward_ = nullptr;
  fftw_plan inverse_ = nullptr;
};

// Normalized frequency coordinates in [-0.5, 0.5) (odd sizes span [-0.5, 0.5]).
std::vector<double> freq_range(int n) {
  std::vector<double> r(n);
  if (n % 2) {
    for (int i = 0; i < n; ++i) r[i] = (i - (n - 1) / 2.0) / (n - 1 > 0 ? n - 1 : 1);
  } else {
    for (int i = 0; i < n; ++i) r[i] = static_cast<double>(i - n / 2) / n;
  }
  return r;
}

// Moves the zero-frequency entry from the center to index (0, 0).
std::vector<double> ifftshift(const std::vector<double>& centered, int rows, int cols) {
  std::vector<double> out(centered.size());
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      out[static_cast<std::size_t>(i) * cols + j] =
          centered[static_cast<std::size_t>((i + rows / 2) % rows) * cols + (j + cols / 2) % cols];
  return out;
}

double median(std::vector<double> v) {
  const std::size_t n = v.size();
  std::nth_element(v.begin(), v.begin() + n / 2, v.end());
  const double upper = v[n / 2];
  if (n % 2) return upper;
  const double lower = *std::max_element(v.begin(), v.begin() + n / 2);
  return 0.5 * (lower + upper);
}

}  // namespace

std::vector<double> phase_congruency(const std::vector<double>& image, int rows, int cols) {
  constexpr int kScales = 4;
  constexpr int kOrients = 4;
  constexpr double kMinWavelength = 6.0;
  constexpr double kMult = 2.0;
  constexpr double kSigmaOnf = 0.55;
  constexpr double kDThetaOnSigma = 1.2;
  constexpr double kNoiseK = 2.0;
  constexpr double kEpsilon = 1e-4;
  const double theta_sigma = std::numbers::pi / kOrients / kDThetaOnSigma;
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  if (image.size() != n) throw ShapeError("phase congruency input size mismatch");

  Fft2 fft(rows, cols);
  const std::vector<cplx> image_fft = fft.forward(std::vector<cplx>(image.begin(), image.end()));

  const auto xr = freq_range(cols);
  const auto yr = freq_range(rows);
  std::vector<double> radius_c(n), theta_c(n);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      const std::size_t k = static_cast<std::size_t>(i) * cols + j;
      radius_c[k] = std::sqrt(xr[j] * xr[j] + yr[i] * yr[i]);
      theta_c[k] = std::atan2(-yr[i], xr[j]);
    }
  std::vector<double> lowpass_c(n);
  for (std::size_t k = 0; k < n; ++k) {
    lowpass_c[k] = 1.0 / (1.0 + std::pow(radius_c[k] / 0.45, 2 * 15));
  }
  std::vector<double> radius = ifftshift(radius_c, rows, cols);
  const std::vector<double> theta = ifftshift(theta_c, rows, cols);
  const std::vector<double> lowpass = ifftshift(lowpass_c, rows, cols);
  radius[0] = 1.0;

  std::vector<std::vector<double>> log_gabor(kScales, std::vector<double>(n));
  for (int s = 0; s < kScales; ++s) {
    const double fo = 1.0 / (kMinWavelength * std::pow(kMult, s));
    const double denom = 2.0 * std::log(kSigmaOnf) * std::log(kSigmaOnf);
    for (std::size_t k = 0; k < n; ++k) {
      const double l = std::log(radius[k] / fo);
      log_gabor[s][k] = std::exp(-(l * l) / denom) * lowpass[k];
    }
    log_gabor[s][0] = 0.0;
  }

  std::vector<double> energy_all(n, 0.0), an_all(n, 0.0);
  for (int o = 0; o < kOrients; ++o) {
    const double angle = o * std::numbers::pi / kOrients;
    std::vector<double> spread(n);
    for (std::size_t k = 0; k < n; ++k) {
      const double ds = std::sin(theta[k]) * std::cos(angle) - std::cos(theta[k]) * std::sin(angle);
      const double dc = std::cos(theta[k]) * std::cos(angle) + std::sin(theta[k]) * std::sin(angle);
      const double dtheta = std::abs(std::atan2(ds, dc));
      spread[k] = std::exp(-(dtheta * dtheta) / (2.0 * theta_sigma * theta_sigma));
    }

    std::vector<double> sum_e(n, 0.0), sum_o(n, 0.0), sum_an(n, 0.0);
    std::vector<std::vector<cplx>> eo(kScales);
    std::vector<std::vector<double>> spatial_filters(kScales);
    double em_n = 0.0;
    for (int s = 0; s < kScales; ++s) {
      std::vector<cplx> filter(n), product(n);
      for (std::size_t k = 0; k < n; ++k) {
        const double f = log_gabor[s][k] * spread[k];
        filter[k] = f;
        product[k] = image_fft[k] * f;
        if (s == 0) em_n += f * f;
      }
      const auto filt_spatial = fft.inverse(filter);
      spatial_filters[s].resize(n);
      const double rescale = std::sqrt(static_cast<double>(n));
      for (std::size_t k = 0; k < n; ++k) spatial_filters[s][k] = filt_spatial[k].real() * rescale;
      eo[s] = fft.inverse(product);
      for (std::size_t k = 0; k < n; ++k) {
        sum_an[k] += std::abs(eo[s][k]);
        sum_e[k] += eo[s][k].real();
        sum_o[k] += eo[s][k].imag();
      }
    }

    std::vector<double> energy(n, 0.0);
    for (std::size_t k = 0; k < n; ++k) {
      const double x_energy = std::sqrt(sum_e[k] * sum_e[k] + sum_o[k] * sum_o[k]) + kEpsilon;
      const double mean_e = sum_e[k] / x_energy;
      const double mean_o = sum_o[k] / x_energy;
      for (int s = 0; s < kScales; ++s) {
        const double e = eo[s][k].real(), od = eo[s][k].imag();
        energy[k] += e * mean_e + od * mean_o - std::abs(e * mean_o - od * mean_e);
      }
    }

    std::vector<double> e2(n);
    for (std::size_t k = 0; k < n; ++k) e2[k] = std::norm(eo[0][k]);
    const double mean_e2n = -median(std::move(e2)) / std::log(0.5);
    const double noise_power = mean_e2n / em_n;

    double sum_an2 = 0.0, sum_aiaj = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
      for (int s = 0; s < kScales; ++s) sum_an2 += spatial_filters[s][k] * spatial_filters[s][k];
      for (int si = 0; si < kScales - 1; ++si)
        for (int sj = si + 1; sj < kScales; ++sj)
          sum_aiaj += spatial_filters[si][k] * spatial_filters[sj][k];
    }
    const double noise_energy2 = 2.0 * noise_power * sum_an2 + 4.0 * noise_power * sum_aiaj;
    const double tau = std::sqrt(noise_energy2 / 2.0);
    const double noise_energy = tau * std::sqrt(std::numbers::pi / 2.0);
    const double noise_sigma = std::sqrt((2.0 - std::numbers::pi / 2.0) * tau * tau);
    const double threshold = (noise_energy + kNoiseK * noise_sigma) / 1.7;

    for (std::size_t k = 0; k < n; ++k) {
      energy_all[k] += std::max(energy[k] - threshold, 0.0);
      an_all[k] += sum_an[k];
    }
  }
  std::vector<double> pc(n);
  for (std::size_t k = 0; k < n; ++k) pc[k] = an_all[k] > 0.0 ? energy_all[k] / an_all[k] : 0.0;
  return pc;
}

namespace {

// MATLAB-style conv2(..., 'same') with a 3x3 kernel and zero padding.
std::vector<double> conv3x3_same(const std::vector<double>& img, int rows, int cols,
                                 const double (&kernel)[3][3]) {
  std::vector<double> out(img.size(), 0.0);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (int u = -1; u <= 1; ++u)
        for (int v = -1; v <= 1; ++v) {
          const int si = i - u, sj = j - v;
          if (si < 0 || si >= rows || sj < 0 || sj >= cols) continue;
          acc += img[static_cast<std::size_t>(si) * cols + sj] * kernel[u + 1][v + 1];
        }
      out[static_cast<std::size_t>(i) * cols + j] = acc;
    }
  return out;
}

// Box-average then keep every factor-th sample, for inputs of 384 px and up.
std::vector<double> downsample(const std::vector<double>& img, int rows, int cols, int factor,
                               int& out_rows, int& out_cols) {
  const int c = (factor - 1) / 2;
  std::vector<double> smooth(img.size(), 0.0);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      double acc = 0.0;
      for (int u = 0; u < factor; ++u)
        for (int v = 0; v < factor; ++v) {
          const int si = i + c - u, sj = j + c - v;
          if (si < 0 || si >= rows || sj < 0 || sj >= cols) continue;
          acc += img[static_cast<std::size_t>(si) * cols + sj];
        }
      smooth[static_cast<std::size_t>(i) * cols + j] = acc / (factor * factor);
    }
  out_rows = (rows + factor - 1) / factor;
  out_cols = (cols + factor - 1) / factor;
  std::vector<double> out(static_cast<std::size_t>(out_rows) * out_cols);
  for (int i = 0; i < out_rows; ++i)
    for (int j = 0; j < out_cols; ++j)
      out[static_cast<std::size_t>(i) * out_cols + j] =
          smooth[static_cast<std::size_t>(i * factor) * cols + j * factor];
  return out;
}

}  // namespace

double fsim(const Image& a, const Image& b) {
  require_same(a, b);
  if (a.height() < 32 || a.width() < 32) throw ShapeError("FSIM needs images of at least 32x32");
  int rows = a.height(), cols = a.width();
  auto y1 = luma_values(a, 255.0);
  auto y2 = luma_values(b, 255.0);
  const int factor = std::max(1, static_cast<int>(std::lround(std::min(rows, cols) / 256.0)));
  if (factor > 1) {
    int r = 0, c = 0;
    y1 = downsample(y1, rows, cols, factor, r, c);
    y2 = downsample(y2, rows, cols, factor, r, c);
    rows = r;
    cols = c;
  }
  const auto pc1 = phase_congruency(y1, rows, cols);
  const auto pc2 = phase_congruency(y2, rows, cols);

  static constexpr double kDx[3][3] = {{3 / 16.0, 0, -3 / 16.0},
                                       {10 / 16.0, 0, -10 / 16.0},
                                       {3 / 16.0, 0, -3 / 16.0}};
  static constexpr double kDy[3][3] = {{3 / 16.0, 10 / 16.0, 3 / 16.0},
                                       {0, 0, 0},
                                       {-3 / 16.0, -10 / 16.0, -3 / 16.0}};
  const auto gx1 = conv3x3_same(y1, rows, cols, kDx);
  const auto gy1 = conv3x3_same(y1, rows, cols, kDy);
  const auto gx2 = conv3x3_same(y2, rows, cols, kDx);
  const auto gy2 = conv3x3_same(y2, rows, cols, kDy);

  constexpr double kT1 = 0.85;
  constexpr double kT2 = 160.0;
  double num = 0.0, den = 0.0, plain = 0.0;
  for (std::size_t k = 0; k < pc1.size(); ++k) {
    const double g1 = std::sqrt(gx1[k] * gx1[k] + gy1[k] * gy1[k]);
    const double g2 = std::sqrt(gx2[k] * gx2[k] + gy2[k] * gy2[k]);
    const double pc_sim = (2.0 * pc1[k] * pc2[k] + kT1) / (pc1[k] * pc1[k] + pc2[k] * pc2[k] + kT1);
    const double g_sim = (2.0 * g1 * g2 + kT2) / (g1 * g1 + g2 * g2 + kT2);
    const double pcm = std::max(pc1[k], pc2[k]);
    num += g_sim * pc_sim * pcm;
    den += pcm;
    plain += g_sim * pc_sim;
  }
  // Featureless inputs (no phase congruency anywhere) fall back to unweighted pooling.
  if (den == 0.0) return plain / static_cast<double>(pc1.size());
  return num / den;
}

ImageMetrics compare(const std::string& id, const Image& result, const Image& truth) {
  return {id, psnr(result, truth), ssim(result, truth), fsim(result, truth)};
}

void summarize(MetricReport& report) {
  if (report.per_image.empty()) throw Error("cannot summarize an empty metric report");
  double p = 0, s = 0, f = 0;
  for (const ImageMetrics& m : report.per_image) {
    p += m.psnr;
    s += m.ssim;
    f += m.fsim;
  }
  const double n = static_cast<double>(report.per_image.size());
  report.mean_psnr = p / n;
  report.mean_ssim = s / n;
  report.mean_fsim = f / n;
}

std::string format_metric(double v) {
  if (std::isinf(v) && v > 0) return "inf";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_report_csv(const MetricReport& report, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "image_id,psnr,ssim,fsim\n";
  for (const ImageMetrics& m : report.per_image) {
    out << m.id << ',' << format_metric(m.psnr) << ',' << format_metric(m.ssim) << ','
        << format_metric(m.fsim) << '\n';
  }
  out << "mean," << format_metric(report.mean_psnr) << ',' << format_metric(report.mean_ssim)
      << ',' << format_metric(report.mean_fsim) << '\n';
}

MetricReport read_report_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != "image_id,psnr,ssim,fsim") {
    throw IoError(path.string() + ": bad header");
  }
  const auto parse = [&](const std::string& s) {
    if (s == "inf") return kPsnrInfinity;
    return std::stod(s);
  };
  MetricReport report;
  bool have_mean = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, p, s, f;
    if (!std::getline(ss, id, ',') || !std::getline(ss, p, ',') || !std::getline(ss, s, ',') ||
        !std::getline(ss, f)) {
      throw IoError(path.string() + ": malformed row '" + line + "'");
    }
    if (id == "mean") {
      report.mean_psnr = parse(p);
      report.mean_ssim = parse(s);
      report.mean_fsim = parse(f);
      have_mean = true;
    } else {
      report.per_image.push_back({id, parse(p), parse(s), parse(f)});
    }
  }
  if (!have_mean) throw IoError(path.string() + ": missing summary row");
  return report;
}

}  // namespace afh
