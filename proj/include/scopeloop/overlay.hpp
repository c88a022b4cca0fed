#pragma once

#include <array>
#include <cstdint>
#include <string>

#include "scopeloop/frame.hpp"
#include "scopeloop/pipelines.hpp"

namespace scopeloop {

using Rgb = std::array<std::uint8_t, 3>;

struct OverlayStyle {
  double mask_alpha = 0.5;
  Rgb high{0, 200, 0};      // green
  Rgb medium{255, 150, 0};  // orange
  Rgb low{0, 90, 255};      // blue
  Rgb positive{200, 40, 30};
  Rgb negative{40, 90, 220};
  Rgb banner_text{255, 255, 255};
  Rgb banner_fill{20, 20, 20};
  double font_scale = 0.6;
  int box_thickness = 2;

  /// Throws InvalidRequest unless mask_alpha is in [0,1].
  void validate() const;
};

[[nodiscard]] Rgb band_color(ConfidenceBand band, const OverlayStyle& style) noexcept;

/// round-half-up(alpha * over + (1 - alpha) * under), per channel.
[[nodiscard]] std::uint8_t blend_channel(std::uint8_t under, std::uint8_t over, double alpha) noexcept;

// All renderers return a new RGB frame; the input is never modified.

/// Box outlines in band colors with the score printed next to each box.
[[nodiscard]] Frame render_detections(const Frame& frame, const DetectionResult& result, const OverlayStyle& style = {});

/// Alpha-blends every stitched mask over the frame.
[[nodiscard]] Frame render_masks(const Frame& frame, const Ki67Result& result, const OverlayStyle& style = {});

/// Top banner "<class>: <p>" with four decimals, e.g. "Glial histology: 0.9970".
[[nodiscard]] Frame render_classification_banner(const Frame& frame, const ClassificationResult& result,
                                                 const OverlayStyle& style = {});

/// Text for the classification banner before any fitting.
[[nodiscard]] std::string classification_label(const ClassificationResult& result);

/// `text` shortened with a trailing "..." until it renders within
/// `max_width_px` at `font_scale`. Returns "" if not even "..." fits.
[[nodiscard]] std::string fit_text(const std::string& text, int max_width_px, double font_scale);
[[nodiscard]] int text_width(const std::string& text, double font_scale);

/// Draws a top banner with `text` (fitted to the frame width).
[[nodiscard]] Frame render_banner(const Frame& frame, const std::string& text, const OverlayStyle& style = {});

/// Task-appropriate overlay plus a one-line summary banner.
[[nodiscard]] Frame render_result(const Frame& frame, const InferenceResult& result, const OverlayStyle& style = {});

}  // namespace scopeloop
