#include "csp/tensor.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "tensor snapshot I/O assumes a little-endian host");

namespace csp {

Tensor::Tensor(int n, int c, int h, int w, double fill)
    : shape{n, c, h, w}
{
    if (n < 0 || c < 0 || h < 0 || w < 0) {
        throw std::invalid_argument("Tensor: negative dimension in shape " + shape_str(*this));
    }
    data.assign(static_cast<std::size_t>(n) * c * h * w, fill);
}

void Tensor::fill(double v)
{
    std::fill(data.begin(), data.end(), v);
}

void Tensor::ensure_grad()
{
    if (grad.size() != data.size()) {
        grad.assign(data.size(), 0.0);
    }
}

void Tensor::zero_grad()
{
    std::fill(grad.begin(), grad.end(), 0.0);
}

bool Tensor::all_finite() const
{
    for (double v : data) {
        if (!std::isfinite(v)) {
            return false;
        }
    }
    return true;
}

Tensor Tensor::slice_batch(int n) const
{
    Tensor out(1, shape[1], shape[2], shape[3]);
    const std::size_t stride = numel() / shape[0];
    std::memcpy(out.data.data(), data.data() + static_cast<std::size_t>(n) * stride,
                stride * sizeof(double));
    return out;
}

std::string shape_str(const Tensor& t)
{
    std::ostringstream os;
    os << "(" << t.shape[0] << ", " << t.shape[1] << ", " << t.shape[2] << ", " << t.shape[3] << ")";
    return os.str();
}

void save_tensor(const std::string& path, const Tensor& t)
{
    std::ofstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("save_tensor: cannot open " + path);
    }
    f.write("CSPT", 4);
    for (int d : t.shape) {
        const auto v = static_cast<std::int32_t>(d);
        f.write(reinterpret_cast<const char*>(&v), sizeof(v));
    }
    f.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!f) {
        throw std::runtime_error("save_tensor: write failed for " + path);
    }
}

Tensor load_tensor(const std::string& path)
{
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw std::runtime_error("load_tensor: cannot open " + path);
    }
    char magic[4];
    f.read(magic, 4);
    if (!f || std::memcmp(magic, "CSPT", 4) != 0) {
        throw std::runtime_error("load_tensor: bad magic in " + path);
    }
    std::array<std::int32_t, 4> shape{};
    f.read(reinterpret_cast<char*>(shape.data()), sizeof(shape));
    if (!f) {
        throw std::runtime_error("load_tensor: truncated header in " + path);
    }
    for (std::int32_t d : shape) {
        if (d < 0) {
            throw std::runtime_error("load_tensor: negative dimension in " + path);
        }
    }
    Tensor t(shape[0], shape[1], shape[2], shape[3]);
    f.read(reinterpret_cast<char*>(t.data.data()),
           static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!f) {
        throw std::runtime_error("load_tensor: truncated data in " + path);
    }
    return t;
}

} // namespace csp
