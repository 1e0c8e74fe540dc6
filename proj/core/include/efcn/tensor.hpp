#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace efcn {

using Shape = std::vector<std::int64_t>;

std::int64_t numel(const Shape& shape);
std::string to_string(const Shape& shape);

/// Dense row-major float32 tensor. Image batches use (N, C, H, W).
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f);
    Tensor(Shape shape, std::vector<float> data);

    static Tensor scalar(float value) { return Tensor(Shape{}, std::vector<float>{value}); }

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::int64_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const noexcept { return data_.size(); }

    std::span<float> data() noexcept { return data_; }
    std::span<const float> data() const noexcept { return data_; }
    float* ptr() noexcept { return data_.data(); }
    const float* ptr() const noexcept { return data_.data(); }

    float& operator[](std::size_t i) noexcept { return data_[i]; }
    float operator[](std::size_t i) const noexcept { return data_[i]; }

    /// Same data, new shape. Throws ShapeError if element counts differ.
    Tensor reshaped(Shape shape) const;
    void reshape(Shape shape);

    bool all_finite() const noexcept;
    void fill(float value) noexcept;

    std::vector<float>& storage() noexcept { return data_; }
    const std::vector<float>& storage() const noexcept { return data_; }

private:
    Shape shape_;
    std::vector<float> data_;
};

}  // namespace efcn
