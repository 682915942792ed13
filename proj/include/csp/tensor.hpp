#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace csp {

// Dense 4-D array in (batch, channel, height, width) order, row-major.
// `grad` is either empty or exactly data.size(); parameter tensors keep it
// allocated, activations normally leave it empty.
struct Tensor {
    std::array<int, 4> shape{0, 0, 0, 0};
    std::vector<double> data;
    std::vector<double> grad;

    Tensor() = default;
    Tensor(int n, int c, int h, int w, double fill = 0.0);

    int n() const { return shape[0]; }
    int c() const { return shape[1]; }
    int h() const { return shape[2]; }
    int w() const { return shape[3]; }

    std::size_t numel() const { return data.size(); }

    std::size_t index(int n, int c, int y, int x) const
    {
        return ((static_cast<std::size_t>(n) * shape[1] + c) * shape[2] + y) * shape[3] + x;
    }

    double& at(int n, int c, int y, int x) { return data[index(n, c, y, x)]; }
    double at(int n, int c, int y, int x) const { return data[index(n, c, y, x)]; }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }

    void fill(double v);
    void ensure_grad();
    void zero_grad();
    bool all_finite() const;

    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape[0], t.shape[1], t.shape[2], t.shape[3]); }

    // Extracts batch element n as a (1,C,H,W) view copy.
    Tensor slice_batch(int n) const;
};

std::string shape_str(const Tensor& t);

// Flat binary snapshot: magic "CSPT", four little-endian int32 shape entries,
// then float64 little-endian values in row-major order. Gradients are not
// stored.
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

} // namespace csp
