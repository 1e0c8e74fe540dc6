#pragma once

#include "efcn/tensor.hpp"

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace efcn {

/// One named block of a flat parameter vector, e.g. "conv0.weight".
struct Segment {
    std::string name;
    int layer = -1;
    std::size_t offset = 0;
    std::size_t length = 0;
    Shape shape;
    bool is_bias = false;

    bool operator==(const Segment&) const = default;
};

/// Flat parameter vector with a segment table that partitions it exactly.
class ParamVector {
public:
    ParamVector() = default;
    ParamVector(std::vector<Segment> segments, std::vector<float> values);
    /// Single unnamed segment covering `values`; handy for toy objectives.
    explicit ParamVector(std::vector<float> values);

    static ParamVector zeros_like(const ParamVector& other);

    std::size_t size() const noexcept { return values_.size(); }
    std::span<float> values() noexcept { return values_; }
    std::span<const float> values() const noexcept { return values_; }
    float& operator[](std::size_t i) noexcept { return values_[i]; }
    float operator[](std::size_t i) const noexcept { return values_[i]; }

    const std::vector<Segment>& segments() const noexcept { return segments_; }
    const Segment& segment(std::string_view name) const;
    std::span<float> view(const Segment& seg) { return std::span<float>(values_).subspan(seg.offset, seg.length); }
    std::span<const float> view(const Segment& seg) const {
        return std::span<const float>(values_).subspan(seg.offset, seg.length);
    }

    bool same_layout(const ParamVector& other) const { return segments_ == other.segments_; }

    std::vector<float>& storage() noexcept { return values_; }
    const std::vector<float>& storage() const noexcept { return values_; }

private:
    std::vector<Segment> segments_;
    std::vector<float> values_;
};

// Reductions accumulate in double.
double dot(std::span<const float> a, std::span<const float> b);
double norm(std::span<const float> a);
double distance(std::span<const float> a, std::span<const float> b);
/// ||a - b|| / max(||a||, ||b||); 0 when both are zero.
double relative_error(std::span<const float> a, std::span<const float> b);
/// y += alpha * x
void axpy(double alpha, std::span<const float> x, std::span<float> y);

}  // namespace efcn
