#pragma once

#include <cstdint>
#include <vector>

#include "mixseg/common.hpp"

namespace mixseg {

// Per-pixel class indices. 255 marks pixels excluded from losses and metrics
// (withheld labels, padding); ground-truth maps never contain it.
struct LabelMap {
    static constexpr std::uint8_t kIgnore = 255;

    std::size_t h = 0, w = 0;
    std::vector<std::uint8_t> v;

    LabelMap() = default;
    LabelMap(std::size_t height, std::size_t width, std::uint8_t fill = 0)
        : h(height), w(width), v(height * width, fill) {}

    std::uint8_t& at(std::size_t y, std::size_t x) { return v[y * w + x]; }
    std::uint8_t at(std::size_t y, std::size_t x) const { return v[y * w + x]; }
    std::size_t numel() const { return v.size(); }

    bool operator==(const LabelMap& o) const { return h == o.h && w == o.w && v == o.v; }

    void check_classes(std::size_t num_classes) const {
        for (std::uint8_t c : v)
            if (c != kIgnore && c >= num_classes)
                throw ConfigError("label value " + std::to_string(int(c)) +
                                  " out of range for " + std::to_string(num_classes) + " classes");
    }
};

}  // namespace mixseg
