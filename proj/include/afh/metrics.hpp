#pragma once

#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "afh/image.hpp"

namespace afh {

/// PSNR for identical images.
inline constexpr double kPsnrInfinity = std::numeric_limits<double>::infinity();

/// All metrics compare the BT.601 luminance of [0,1] images without border cropping.
double psnr(const Image& a, const Image& b);

/// Gaussian-window SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03, L 1) averaged over
/// every fully-inside window position.
double ssim(const Image& a, const Image& b);

/// Feature similarity: log-Gabor phase congruency (4 scales x 4 orientations)
/// and Scharr gradient magnitude similarities, pooled with max(PC_a, PC_b).
/// Luminance is scaled to 0..255 to match the standard constants.
double fsim(const Image& a, const Image& b);

/// Phase congruency map of a single-channel image given in 0..255 units.
std::vector<double> phase_congruency(const std::vector<double>& image, int height, int width);

struct ImageMetrics {
  std::string id;
  double psnr = 0;
  double ssim = 0;
  double fsim = 0;
};

struct MetricReport {
  std::vector<ImageMetrics> per_image;
  double mean_psnr = 0;
  double mean_ssim = 0;
  double mean_fsim = 0;
};

ImageMetrics compare(const std::string& id, const Image& result, const Image& truth);

/// Fills the means from per_image (arithmetic average; an infinite PSNR makes the mean infinite).
void summarize(MetricReport& report);

/// CSV with header image_id,psnr,ssim,fsim, one row per image and a final "mean" row.
/// Infinite PSNR is written as "inf".
void write_report_csv(const MetricReport& report, const std::filesystem::path& path);
MetricReport read_report_csv(const std::filesystem::path& path);

std::string format_metric(double v);

}  // namespace afh
