#include "efcn/params.hpp"

#include "efcn/errors.hpp"

#include <algorithm>
#include <cmath>

namespace efcn {

ParamVector::ParamVector(std::vector<Segment> segments, std::vector<float> values)
    : segments_(std::move(segments)), values_(std::move(values)) {
    std::size_t cursor = 0;
    for (const auto& s : segments_) {
        if (s.offset != cursor) throw ShapeError("segment '" + s.name + "' does not start where the previous one ended");
        if (numel(s.shape) != static_cast<std::int64_t>(s.length)) {
            throw ShapeError("segment '" + s.name + "' length disagrees with its shape " + to_string(s.shape));
        }
        cursor += s.length;
    }
    if (cursor != values_.size()) {
        throw ShapeError("segment table covers " + std::to_string(cursor) + " entries but vector has " +
                         std::to_string(values_.size()));
    }
}

ParamVector::ParamVector(std::vector<float> values) : values_(std::move(values)) {
    const std::size_t n = values_.size();
    segments_.push_back(Segment{"theta", -1, 0, n, Shape{static_cast<std::int64_t>(n)}, false});
}

ParamVector ParamVector::zeros_like(const ParamVector& other) {
    return ParamVector(other.segments_, std::vector<float>(other.size(), 0.0f));
}

const Segment& ParamVector::segment(std::string_view name) const {
    auto it = std::find_if(segments_.begin(), segments_.end(), [&](const Segment& s) { return s.name == name; });
    if (it == segments_.end()) throw ShapeError("no parameter segment named '" + std::string(name) + "'");
    return *it;
}

double dot(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw ShapeError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return s;
}

double norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

double distance(std::span<const float> a, std::span<const float> b) {
    if (a.size() != b.size()) throw ShapeError("distance: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += d * d;
    }
    return std::sqrt(s);
}

double relative_error(std::span<const float> a, std::span<const float> b) {
    const double scale = std::max(norm(a), norm(b));
    if (scale == 0.0) return 0.0;
    return distance(a, b) / scale;
}

void axpy(double alpha, std::span<const float> x, std::span<float> y) {
    if (x.size() != y.size()) throw ShapeError("axpy: length mismatch");
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = static_cast<float>(y[i] + alpha * x[i]);
}

}  // namespace efcn
