#include "scopeloop/overlay.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <opencv2/imgproc.hpp>

#include "scopeloop/error.hpp"

namespace scopeloop {

namespace {

constexpr int kFont = cv::FONT_HERSHEY_SIMPLEX;
constexpr int kMargin = 6;

// RGB frames map onto CV_8UC3 with channels in R,G,B order; colors below are
// passed in the same order so no swapping is needed.
cv::Mat wrap(Frame& frame) { return {frame.height, frame.width, CV_8UC3, frame.pixels.data()}; }
cv::Scalar scalar(const Rgb& c) { return {double(c[0]), double(c[1]), double(c[2])}; }

std::string format_score(double v, int decimals) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

}  // namespace

void OverlayStyle::validate() const {
  if (!(mask_alpha >= 0.0 && mask_alpha <= 1.0)) throw Error(ErrorCode::InvalidRequest, "mask_alpha must be in [0,1]");
}

Rgb band_color(ConfidenceBand band, const OverlayStyle& style) noexcept {
  switch (band) {
    case ConfidenceBand::High: return style.high;
    case ConfidenceBand::Medium: return style.medium;
    case ConfidenceBand::Low: return style.low;
  }
  return style.low;
}

std::uint8_t blend_channel(std::uint8_t under, std::uint8_t over, double alpha) noexcept {
  const double v = alpha * over + (1.0 - alpha) * under;
  return static_cast<std::uint8_t>(std::clamp(std::floor(v + 0.5), 0.0, 255.0));
}

int text_width(const std::string& text, double font_scale) {
  int baseline = 0;
  return cv::getTextSize(text, kFont, font_scale, 1, &baseline).width;
}

std::string fit_text(const std::string& text, int max_width_px, double font_scale) {
  if (text_width(text, font_scale) <= max_width_px) return text;
  std::string head = text;
  while (!head.empty()) {
    head.pop_back();
    const std::string candidate = head + "...";
    if (text_width(candidate, font_scale) <= max_width_px) return candidate;
  }
  return text_width("...", font_scale) <= max_width_px ? "..." : "";
}

Frame render_detections(const Frame& frame, const DetectionResult& result, const OverlayStyle& style) {
  Frame out = convert_format(frame, PixelFormat::RGB);
  if (result.detections.empty()) return out;
  cv::Mat mat = wrap(out);
  for (std::size_t i = 0; i < result.detections.size(); ++i) {
    const Detection& d = result.detections[i];
    const ConfidenceBand band = i < result.bands.size() ? result.bands[i] : band_for(d.score);
    const cv::Scalar color = scalar(band_color(band, style));
    const cv::Point tl(static_cast<int>(std::lround(d.box.x)), static_cast<int>(std::lround(d.box.y)));
    const cv::Point br(static_cast<int>(std::lround(d.box.x + d.box.w)) - 1,
                       static_cast<int>(std::lround(d.box.y + d.box.h)) - 1);
    cv::rectangle(mat, tl, br, color, style.box_thickness, cv::LINE_8);

    const std::string label = format_score(d.score, 2);
    int baseline = 0;
    const cv::Size size = cv::getTextSize(label, kFont, style.font_scale * 0.7, 1, &baseline);
    int ty = tl.y - 3;
    if (ty - size.height < 0) ty = br.y + size.height + 3;
    cv::putText(mat, label, {std::max(0, tl.x), ty}, kFont, style.font_scale * 0.7, color, 1, cv::LINE_8);
  }
  return out;
}

Frame render_masks(const Frame& frame, const Ki67Result& result, const OverlayStyle& style) {
  style.validate();
  Frame out = convert_format(frame, PixelFormat::RGB);
  for (const auto& mask : result.stitched_masks) {
    const Rgb& color = mask.label == Ki67Label::Positive ? style.positive : style.negative;
    for (const auto& run : mask.runs) {
      const int y = run.y + mask.tile_origin.y;
      if (y < 0 || y >= out.height) continue;
      const int x0 = std::max(0, run.x + mask.tile_origin.x);
      const int x1 = std::min(out.width, run.x + mask.tile_origin.x + run.length);
      for (int x = x0; x < x1; ++x) {
        std::uint8_t* px = out.at(x, y);
        for (int c = 0; c < 3; ++c) px[c] = blend_channel(px[c], color[c], style.mask_alpha);
      }
    }
  }
  return out;
}

std::string classification_label(const ClassificationResult& result) {
  const auto& names = result.mean_probs.class_names;
  const std::size_t k = result.predicted;
  std::string name = k < names.size() ? names[k] : std::string();
  if (name.empty()) name = "class " + std::to_string(k);
  const double p = k < result.mean_probs.probs.size() ? result.mean_probs.probs[k] : 0.0;
  return name + ": " + format_score(p, 4);
}

Frame render_banner(const Frame& frame, const std::string& text, const OverlayStyle& style) {
  Frame out = convert_format(frame, PixelFormat::RGB);
  const std::string fitted = fit_text(text, out.width - 2 * kMargin, style.font_scale);
  int baseline = 0;
  const cv::Size size = cv::getTextSize(fitted.empty() ? "Ag" : fitted, kFont, style.font_scale, 1, &baseline);
  const int strip = std::min(out.height, size.height + baseline + 2 * kMargin);
  cv::Mat mat = wrap(out);
  cv::rectangle(mat, {0, 0}, {out.width - 1, strip - 1}, scalar(style.banner_fill), cv::FILLED);
  if (!fitted.empty()) {
    cv::putText(mat, fitted, {kMargin, kMargin + size.height}, kFont, style.font_scale, scalar(style.banner_text), 1,
                cv::LINE_AA);
  }
  return out;
}

Frame render_classification_banner(const Frame& frame, const ClassificationResult& result, const OverlayStyle& style) {
  return render_banner(frame, classification_label(result), style);
}

Frame render_result(const Frame& frame, const InferenceResult& result, const OverlayStyle& style) {
  return std::visit(
      [&](const auto& r) -> Frame {
        using T = std::decay_t<decltype(r)>;
        if constexpr (std::is_same_v<T, ClassificationResult>) {
          return render_classification_banner(frame, r, style);
        } else if constexpr (std::is_same_v<T, DetectionResult>) {
          return render_banner(render_detections(frame, r, style),
                               "Mitotic figures: " + std::to_string(r.detections.size()), style);
        } else {
          std::string text = "Ki-67: " + std::to_string(r.positive) + "+ / " + std::to_string(r.negative) + "-";
          if (r.index) text += "  index " + format_score(*r.index, 4);
          return render_banner(render_masks(frame, r, style), text, style);
        }
      },
      result);
}

}  // namespace scopeloop
