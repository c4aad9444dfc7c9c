// Fringe pattern synthesis, N-step phase retrieval, Gray-code decoding,
// temporal unwrapping and measurement-validity masking.
#pragma once

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "projref/image.hpp"

namespace projref {

inline constexpr double kTwoPi = 2.0 * std::numbers::pi;

enum class FringeAxis { Horizontal, Vertical };  // Horizontal encodes columns (u)

/// Design of one projected pattern sequence for a single axis.
struct PatternSpec {
  int steps = 18;              // N, phase-shift count (>= 3)
  double period_h = 18.0;      // T_H, projector pixels per 2*pi
  double period_v = 18.0;      // T_V
  int gray_bits = 6;
  int width = 912;
  int height = 1140;
  double mean_intensity = 0.5;  // I'
  double modulation = 0.45;     // I''

  double period(FringeAxis axis) const {
    return axis == FringeAxis::Horizontal ? period_h : period_v;
  }

  void validate() const {
    if (steps < 3) throw std::invalid_argument("PatternSpec: steps must be >= 3");
    if (mean_intensity - modulation < 0.0 || mean_intensity + modulation > 1.0)
      throw std::invalid_argument("PatternSpec: I' +/- I'' must stay in [0,1]");
    if ((1 << gray_bits) < int(std::ceil(width / period_h)) ||
        (1 << gray_bits) < int(std::ceil(height / period_v)))
      throw std::invalid_argument("PatternSpec: gray_bits cannot index every period");
  }
};

/// Fringe intensity at a continuous projector coordinate for shift index n.
inline double fringe_intensity(const PatternSpec& spec, FringeAxis axis, double coord, int n) {
  double phase = kTwoPi * coord / spec.period(axis) - kTwoPi * n / spec.steps;
  return spec.mean_intensity + spec.modulation * std::cos(phase);
}

inline int gray_encode(int m) { return m ^ (m >> 1); }

inline int gray_decode(int g) {
  int b = 0;
  for (; g; g >>= 1) b ^= g;
  return b;
}

/// Gray-code bit value (0/1) at a continuous projector coordinate.
/// Bit index 0 is the most significant bit; codes index floor(coord/T).
inline int gray_bit_at(const PatternSpec& spec, FringeAxis axis, double coord, int bit) {
  int m = int(std::floor(coord / spec.period(axis)));
  m = std::max(0, std::min(m, (1 << spec.gray_bits) - 1));
  int g = gray_encode(m);
  return (g >> (spec.gray_bits - 1 - bit)) & 1;
}

/// Gray-code pattern intensity; bits are rendered at I' +/- I'' so that the
/// exposure rules of the validity mask apply uniformly.
inline double gray_intensity(const PatternSpec& spec, FringeAxis axis, double coord, int bit,
                             bool complement) {
  int b = gray_bit_at(spec, axis, coord, bit);
  if (complement) b = 1 - b;
  return b ? spec.mean_intensity + spec.modulation : spec.mean_intensity - spec.modulation;
}

/// The N projector-side phase-shifted cosine fringe images.
inline std::vector<ImageF> generate_fringe_patterns(const PatternSpec& spec, FringeAxis axis) {
  spec.validate();
  std::vector<ImageF> out;
  out.reserve(spec.steps);
  for (int n = 0; n < spec.steps; ++n) {
    ImageF img(spec.width, spec.height);
    for (int y = 0; y < spec.height; ++y)
      for (int x = 0; x < spec.width; ++x) {
        double coord = axis == FringeAxis::Horizontal ? x : y;
        img.at(x, y) = fringe_intensity(spec, axis, coord, n);
      }
    out.push_back(std::move(img));
  }
  return out;
}

/// Gray-code projector images, pattern and complement interleaved:
/// [bit0, ~bit0, bit1, ~bit1, ...].
inline std::vector<ImageF> generate_gray_patterns(const PatternSpec& spec, FringeAxis axis) {
  std::vector<ImageF> out;
  out.reserve(2 * spec.gray_bits);
  for (int bit = 0; bit < spec.gray_bits; ++bit)
    for (int comp = 0; comp < 2; ++comp) {
      ImageF img(spec.width, spec.height);
      for (int y = 0; y < spec.height; ++y)
        for (int x = 0; x < spec.width; ++x) {
          double coord = axis == FringeAxis::Horizontal ? x : y;
          img.at(x, y) = gray_intensity(spec, axis, coord, bit, comp == 1);
        }
      out.push_back(std::move(img));
    }
  return out;
}

struct WrappedPhaseResult {
  ImageF phase;       // phi in (-pi, pi]
  ImageF modulation;  // (2/N) * sqrt(num^2 + den^2), estimates I'' on clean data
};

/// N-step least-squares wrapped phase via atan2.
inline WrappedPhaseResult extract_wrapped_phase(const std::vector<ImageF>& stack) {
  if (stack.size() < 3) throw std::invalid_argument("extract_wrapped_phase: need N >= 3 images");
  int w = stack[0].width, h = stack[0].height;
  int n_steps = int(stack.size());
  for (const auto& img : stack)
    if (!img.same_shape(w, h))
      throw std::invalid_argument("extract_wrapped_phase: mismatched image sizes");

  std::vector<double> sn(n_steps), cs(n_steps);
  for (int n = 0; n < n_steps; ++n) {
    sn[n] = std::sin(kTwoPi * n / n_steps);
    cs[n] = std::cos(kTwoPi * n / n_steps);
  }

  WrappedPhaseResult out{ImageF(w, h), ImageF(w, h)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double num = 0.0, den = 0.0;
      for (int n = 0; n < n_steps; ++n) {
        double i = stack[n].at(x, y);
        num += i * sn[n];
        den += i * cs[n];
      }
      out.phase.at(x, y) = (num == 0.0 && den == 0.0) ? 0.0 : std::atan2(num, den);
      out.modulation.at(x, y) = 2.0 / n_steps * std::hypot(num, den);
    }
  return out;
}

struct GrayDecodeResult {
  GridI order;          // decoded period index m = floor(coord / T)
  GridU8 transition;    // 1 where any bit was ambiguous
};

/// Decodes camera-observed Gray-code stacks (pattern/complement pairs).
/// The per-pixel threshold is the mean of each pair; a bit whose contrast
/// falls inside the ambiguity band is flagged as a transition pixel.
inline GrayDecodeResult decode_gray(const std::vector<ImageF>& code_images, int bits,
                                    double ambiguity_band = 0.1) {
  if (int(code_images.size()) != 2 * bits)
    throw std::invalid_argument("decode_gray: expected 2*bits images");
  int w = code_images[0].width, h = code_images[0].height;
  GrayDecodeResult out{GridI(w, h), GridU8(w, h)};
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int g = 0;
      bool ambiguous = false;
      for (int bit = 0; bit < bits; ++bit) {
        double ip = code_images[2 * bit].at(x, y);
        double ic = code_images[2 * bit + 1].at(x, y);
        double contrast = ip + ic;
        if (std::abs(ip - ic) <= ambiguity_band * std::max(contrast, 1e-12)) ambiguous = true;
        g = (g << 1) | (ip > ic ? 1 : 0);
      }
      out.order.at(x, y) = gray_decode(g);
      out.transition.at(x, y) = ambiguous ? 1 : 0;
    }
  return out;
}

/// Temporal unwrap with half-period consistency correction.
///
/// The Gray code indexes the period cell m = floor(coord/T); the wrapped
/// phase of a cosine fringe crosses zero exactly at the cell boundary, so
/// the order consistent with phi is m for phi >= 0 and m+1 for phi < 0.
/// This keeps Phi continuous across both the phase wrap at mid-cell and the
/// Gray transition at the cell boundary.
inline ImageF unwrap(const ImageF& wrapped, const GridI& order) {
  if (!order.same_shape(wrapped.width, wrapped.height))
    throw std::invalid_argument("unwrap: mismatched map sizes");
  ImageF out(wrapped.width, wrapped.height);
  for (size_t i = 0; i < out.size(); ++i) {
    double phi = wrapped.data[i];
    int k = order.data[i] + (phi < 0.0 ? 1 : 0);
    out.data[i] = phi + kTwoPi * k;
  }
  return out;
}

/// Projector coordinate = Phi * T / (2*pi).
inline ImageF phase_to_pixel(const ImageF& unwrapped, double period) {
  ImageF out(unwrapped.width, unwrapped.height);
  for (size_t i = 0; i < out.size(); ++i) out.data[i] = unwrapped.data[i] * period / kTwoPi;
  return out;
}

inline double phase_to_pixel(double unwrapped, double period) {
  return unwrapped * period / kTwoPi;
}

enum class MaskReason : uint8_t {
  Ok = 0,
  Saturated,
  LowModulation,
  GraycodeTransition,
  FringeEdge,
  Occluded,
};

inline const char* mask_reason_name(MaskReason r) {
  switch (r) {
    case MaskReason::Ok: return "ok";
    case MaskReason::Saturated: return "saturated";
    case MaskReason::LowModulation: return "low-modulation";
    case MaskReason::GraycodeTransition: return "graycode-transition";
    case MaskReason::FringeEdge: return "fringe-edge";
    case MaskReason::Occluded: return "occluded";
  }
  return "?";
}

struct ValidityMask {
  GridU8 reason;

  bool valid(int x, int y) const { return reason.at(x, y) == uint8_t(MaskReason::Ok); }
  MaskReason reason_at(int x, int y) const { return MaskReason(reason.at(x, y)); }
  size_t count_valid() const {
    size_t n = 0;
    for (auto r : reason.data) n += (r == uint8_t(MaskReason::Ok));
    return n;
  }
};

struct MaskConfig {
  double saturation = 0.98;     // any frame at/above -> rejected
  double underexposure = 0.02;  // all frames at/below -> rejected
  double modulation_min = 0.05;
  // wrapped-phase spatial gradient bound, radians per camera pixel;
  // default 0.8 * (2*pi / 18) for the stock 18 px fringe period
  double fringe_edge_gradient = 0.8 * kTwoPi / 18.0;
};

namespace detail {
inline double wrap_diff(double a, double b) {
  double d = a - b;
  while (d > std::numbers::pi) d -= kTwoPi;
  while (d <= -std::numbers::pi) d += kTwoPi;
  return d;
}
}  // namespace detail

/// Applies the four rejection rules: exposure, Gray transitions (plus a
/// one-pixel dilation), low modulation, and unstable wrapped-phase gradient.
/// An optional occlusion grid (from the simulator's shadow test) marks
/// pixels Occluded before any other rule fires.
inline ValidityMask build_validity_mask(const std::vector<ImageF>& stack, const ImageF& modulation,
                                        const ImageF& wrapped, const GridU8& transition,
                                        const MaskConfig& cfg, const GridU8* occluded = nullptr) {
  int w = modulation.width, h = modulation.height;
  ValidityMask mask{GridU8(w, h, uint8_t(MaskReason::Ok))};

  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      if (occluded && occluded->at(x, y)) {
        mask.reason.at(x, y) = uint8_t(MaskReason::Occluded);
        continue;
      }
      bool any_hot = false, all_cold = true;
      for (const auto& img : stack) {
        double i = img.at(x, y);
        any_hot |= i >= cfg.saturation;
        all_cold &= i <= cfg.underexposure;
      }
      if (any_hot || all_cold) {
        mask.reason.at(x, y) = uint8_t(MaskReason::Saturated);
        continue;
      }
      // transition flags with 1-pixel dilation
      bool near_transition = false;
      for (int dy = -1; dy <= 1 && !near_transition; ++dy)
        for (int dx = -1; dx <= 1; ++dx)
          if (transition.in_bounds(x + dx, y + dy) && transition.at(x + dx, y + dy)) {
            near_transition = true;
            break;
          }
      if (near_transition) {
        mask.reason.at(x, y) = uint8_t(MaskReason::GraycodeTransition);
        continue;
      }
      if (modulation.at(x, y) < cfg.modulation_min) {
        mask.reason.at(x, y) = uint8_t(MaskReason::LowModulation);
        continue;
      }
      double g = 0.0;
      if (x + 1 < w) g = std::max(g, std::abs(detail::wrap_diff(wrapped.at(x + 1, y), wrapped.at(x, y))));
      if (x > 0) g = std::max(g, std::abs(detail::wrap_diff(wrapped.at(x, y), wrapped.at(x - 1, y))));
      if (y + 1 < h) g = std::max(g, std::abs(detail::wrap_diff(wrapped.at(x, y + 1), wrapped.at(x, y))));
      if (y > 0) g = std::max(g, std::abs(detail::wrap_diff(wrapped.at(x, y), wrapped.at(x, y - 1))));
      if (g > cfg.fringe_edge_gradient)
        mask.reason.at(x, y) = uint8_t(MaskReason::FringeEdge);
    }
  return mask;
}

/// Intersection of per-projector masks; the first non-ok reason wins.
inline ValidityMask intersect_masks(const ValidityMask& a, const ValidityMask& b) {
  ValidityMask out = a;
  for (size_t i = 0; i < out.reason.size(); ++i)
    if (out.reason.data[i] == uint8_t(MaskReason::Ok)) out.reason.data[i] = b.reason.data[i];
  return out;
}

}  // namespace projref
