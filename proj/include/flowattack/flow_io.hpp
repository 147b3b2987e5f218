#pragma once

#include <optional>
#include <string>

#include "flowattack/types.hpp"

namespace flowattack {

// Middlebury .flo: float magic 202021.25, int32 width/height, interleaved
// (u, v) float32 pairs, row-major, little-endian.
FlowField read_flo(const std::string& path);
void write_flo(const std::string& path, const FlowField& flow);

// KITTI-convention 16-bit RGB PNG: u = (ch1 - 2^15)/64, v = (ch2 - 2^15)/64,
// valid = ch3 > 0. Writing saturates to the representable range.
struct KittiFlow {
  FlowField flow;
  Mask valid;
};
KittiFlow read_kitti_png(const std::string& path);
void write_kitti_png(const std::string& path, const FlowField& flow, const Mask& valid);

// 8-bit single-channel label PNG holding Category ids.
LabelMap read_label_png(const std::string& path);
void write_label_png(const std::string& path, const LabelMap& labels);

// 8-bit RGB renders of [0,1] images.
Image read_image_png(const std::string& path);
void write_image_png(const std::string& path, const Image& image);

// Middlebury color-wheel rendering; zero flow is white. max_magnitude
// defaults to the 99th-percentile flow magnitude.
Image flow_to_color(const FlowField& flow,
                    std::optional<double> max_magnitude = std::nullopt);

// Grayscale |delta| map normalized to its max.
Image perturbation_heatmap(const Image& perturbed, const Image& original);

}  // namespace flowattack
