#include "flowattack/flow_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

#include "png_util.hpp"

namespace flowattack {

namespace {

constexpr float kFloMagic = 202021.25f;

[[noreturn]] void flo_error(const std::string& path, const std::string& why) {
  throw std::runtime_error("flo: " + path + ": " + why);
}

// 55-entry Middlebury color wheel
std::vector<std::array<double, 3>> make_color_wheel() {
  const int RY = 15, YG = 6, GC = 4, CB = 11, BM = 13, MR = 6;
  std::vector<std::array<double, 3>> wheel;
  wheel.reserve(RY + YG + GC + CB + BM + MR);
  for (int i = 0; i < RY; ++i) wheel.push_back({1.0, static_cast<double>(i) / RY, 0.0});
  for (int i = 0; i < YG; ++i) wheel.push_back({1.0 - static_cast<double>(i) / YG, 1.0, 0.0});
  for (int i = 0; i < GC; ++i) wheel.push_back({0.0, 1.0, static_cast<double>(i) / GC});
  for (int i = 0; i < CB; ++i) wheel.push_back({0.0, 1.0 - static_cast<double>(i) / CB, 1.0});
  for (int i = 0; i < BM; ++i) wheel.push_back({static_cast<double>(i) / BM, 0.0, 1.0});
  for (int i = 0; i < MR; ++i) wheel.push_back({1.0, 0.0, 1.0 - static_cast<double>(i) / MR});
  return wheel;
}

}  // namespace

FlowField read_flo(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) flo_error(path, "cannot open");
  std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                          std::istreambuf_iterator<char>());

  if (bytes.size() < 12) {
    flo_error(path, "truncated header: " + std::to_string(bytes.size()) +
                        " bytes, need 12 (magic at offset 0, dims at offset 4)");
  }
  float magic;
  std::memcpy(&magic, bytes.data(), 4);
  if (magic != kFloMagic) {
    flo_error(path, "bad magic at offset 0 (expected 202021.25)");
  }
  int32_t w, h;
  std::memcpy(&w, bytes.data() + 4, 4);
  std::memcpy(&h, bytes.data() + 8, 4);
  if (w < 1 || h < 1 || w > 100000 || h > 100000) {
    flo_error(path, "bad dimensions " + std::to_string(w) + "x" + std::to_string(h) +
                        " at offset 4");
  }
  const size_t expected = static_cast<size_t>(w) * h * 2 * sizeof(float);
  if (bytes.size() != 12 + expected) {
    flo_error(path, "payload at offset 12: expected " + std::to_string(expected) +
                        " bytes, found " + std::to_string(bytes.size() - 12));
  }

  FlowField flow(h, w);
  const char* p = bytes.data() + 12;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      float u, v;
      std::memcpy(&u, p, 4);
      std::memcpy(&v, p + 4, 4);
      p += 8;
      flow.u.at(y, x) = u;
      flow.v.at(y, x) = v;
    }
  }
  return flow;
}

void write_flo(const std::string& path, const FlowField& flow) {
  if (!flow.u.all_finite() || !flow.v.all_finite()) {
    flo_error(path, "refusing to write non-finite flow");
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) flo_error(path, "cannot open for writing");
  const int32_t w = flow.width(), h = flow.height();
  out.write(reinterpret_cast<const char*>(&kFloMagic), 4);
  out.write(reinterpret_cast<const char*>(&w), 4);
  out.write(reinterpret_cast<const char*>(&h), 4);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const float u = static_cast<float>(flow.u.at(y, x));
      const float v = static_cast<float>(flow.v.at(y, x));
      out.write(reinterpret_cast<const char*>(&u), 4);
      out.write(reinterpret_cast<const char*>(&v), 4);
    }
  }
  if (!out) flo_error(path, "write failed");
}

KittiFlow read_kitti_png(const std::string& path) {
  int h = 0, w = 0;
  const std::vector<uint16_t> raw = pngio::read_png16(path, 3, h, w);
  KittiFlow out;
  out.flow = FlowField(h, w);
  out.valid = Mask(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t i = (static_cast<size_t>(y) * w + x) * 3;
      out.flow.u.at(y, x) = (static_cast<double>(raw[i]) - 32768.0) / 64.0;
      out.flow.v.at(y, x) = (static_cast<double>(raw[i + 1]) - 32768.0) / 64.0;
      if (raw[i + 2] > 0) out.valid.mark(y, x);
    }
  }
  return out;
}

void write_kitti_png(const std::string& path, const FlowField& flow, const Mask& valid) {
  if (flow.height() != valid.height || flow.width() != valid.width) {
    throw std::invalid_argument("write_kitti_png: shape mismatch");
  }
  const int h = flow.height(), w = flow.width();
  std::vector<uint16_t> raw(static_cast<size_t>(h) * w * 3);
  auto quantize = [](double value) -> uint16_t {
    const double scaled = std::lround(value * 64.0 + 32768.0);
    return static_cast<uint16_t>(std::min(std::max(scaled, 0.0), 65535.0));
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t i = (static_cast<size_t>(y) * w + x) * 3;
      raw[i] = quantize(flow.u.at(y, x));
      raw[i + 1] = quantize(flow.v.at(y, x));
      raw[i + 2] = valid.at(y, x) ? 1 : 0;
    }
  }
  pngio::write_png16(path, h, w, 3, raw);
}

LabelMap read_label_png(const std::string& path) {
  int h = 0, w = 0;
  const std::vector<uint8_t> raw = pngio::read_png8(path, 1, h, w);
  LabelMap labels(h, w);
  for (size_t i = 0; i < raw.size(); ++i) {
    if (raw[i] > static_cast<uint8_t>(Category::Vehicle)) {
      throw std::runtime_error("labels: " + path + ": unknown category id " +
                               std::to_string(raw[i]) + " at pixel " + std::to_string(i));
    }
    labels.ids[i] = raw[i];
  }
  return labels;
}

void write_label_png(const std::string& path, const LabelMap& labels) {
  pngio::write_png8(path, labels.height, labels.width, 1, labels.ids);
}

Image read_image_png(const std::string& path) {
  int h = 0, w = 0;
  const std::vector<uint8_t> raw = pngio::read_png8(path, 3, h, w);
  Image img(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t i = (static_cast<size_t>(y) * w + x) * 3;
      for (int c = 0; c < 3; ++c) {
        img.channels[c].at(y, x) = raw[i + c] / 255.0;
      }
    }
  }
  return img;
}

void write_image_png(const std::string& path, const Image& image) {
  const int h = image.height(), w = image.width();
  std::vector<uint8_t> raw(static_cast<size_t>(h) * w * 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const size_t i = (static_cast<size_t>(y) * w + x) * 3;
      for (int c = 0; c < 3; ++c) {
        const double v = std::lround(image.channels[c].at(y, x) * 255.0);
        raw[i + c] = static_cast<uint8_t>(std::min(std::max(v, 0.0), 255.0));
      }
    }
  }
  pngio::write_png8(path, h, w, 3, raw);
}

Image flow_to_color(const FlowField& flow, std::optional<double> max_magnitude) {
  static const std::vector<std::array<double, 3>> wheel = make_color_wheel();
  const int ncols = static_cast<int>(wheel.size());
  const int h = flow.height(), w = flow.width();

  double maxrad;
  if (max_magnitude.has_value()) {
    maxrad = *max_magnitude;
  } else {
    std::vector<double> mags(flow.u.size());
    for (size_t i = 0; i < mags.size(); ++i) {
      mags[i] = std::hypot(flow.u.values[i], flow.v.values[i]);
    }
    const size_t k = static_cast<size_t>(0.99 * (mags.size() - 1));
    std::nth_element(mags.begin(), mags.begin() + k, mags.end());
    maxrad = mags[k];
    if (maxrad <= 0.0) {
      maxrad = *std::max_element(mags.begin(), mags.end());
    }
  }
  if (maxrad <= 0.0) maxrad = 1.0;

  Image out(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double fx = flow.u.at(y, x) / maxrad;
      const double fy = flow.v.at(y, x) / maxrad;
      const double rad = std::hypot(fx, fy);
      const double a = std::atan2(-fy, -fx) / 3.14159265358979323846;
      const double fk = (a + 1.0) / 2.0 * (ncols - 1);
      int k0 = static_cast<int>(fk);
      if (k0 >= ncols) k0 = ncols - 1;
      const int k1 = (k0 + 1) % ncols;
      const double f = fk - k0;
      for (int c = 0; c < 3; ++c) {
        double col = (1.0 - f) * wheel[k0][c] + f * wheel[k1][c];
        if (rad <= 1.0) {
          col = 1.0 - rad * (1.0 - col);
        } else {
          col *= 0.75;
        }
        out.channels[c].at(y, x) = col;
      }
    }
  }
  return out;
}

Image perturbation_heatmap(const Image& perturbed, const Image& original) {
  if (perturbed.height() != original.height() || perturbed.width() != original.width()) {
    throw std::invalid_argument("perturbation_heatmap: shape mismatch");
  }
  const int h = perturbed.height(), w = perturbed.width();
  Field2D mag(h, w);
  double peak = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double d = 0.0;
      for (int c = 0; c < 3; ++c) {
        d += std::fabs(perturbed.channels[c].at(y, x) - original.channels[c].at(y, x));
      }
      d /= 3.0;
      mag.at(y, x) = d;
      peak = std::max(peak, d);
    }
  }
  Image out(h, w);
  if (peak > 0.0) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const double v = mag.at(y, x) / peak;
        for (int c = 0; c < 3; ++c) out.channels[c].at(y, x) = v;
      }
    }
  }
  return out;
}

}  // namespace flowattack
