#pragma once

// Low-rank adaptation: W~ = W + alpha * A B with A (d_out x r), B (r x d_in).

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "llambda/blob_file.hpp"
#include "llambda/error.hpp"
#include "llambda/random.hpp"

namespace llambda::lora {

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_) throw ConfigError("matrix data size does not match its shape");
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

/// Counts multiply-adds as 2 flops each.
struct FlopCounter {
    std::uint64_t flops = 0;
};

inline std::vector<double> matvec(const Matrix& m, std::span<const double> x, FlopCounter* counter = nullptr) {
    if (x.size() != m.cols()) throw StageError("matvec: shape mismatch");
    std::vector<double> y(m.rows(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < m.cols(); ++c) acc += m(r, c) * x[c];
        y[r] = acc;
    }
    if (counter) counter->flops += 2ull * m.rows() * m.cols();
    return y;
}

inline Matrix matmul(const Matrix& a, const Matrix& b, FlopCounter* counter = nullptr) {
    if (a.cols() != b.rows()) throw StageError("matmul: shape mismatch");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t k = 0; k < a.cols(); ++k) {
            const double aik = a(i, k);
            for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
        }
    }
    if (counter) counter->flops += 2ull * a.rows() * a.cols() * b.cols();
    return out;
}

struct LoraAdapter {
    Matrix a; // d_out x r
    Matrix b; // r x d_in
    double alpha = 1.0;
    std::uint64_t seed = 0;

    std::size_t rank() const noexcept { return a.cols(); }
    std::size_t d_out() const noexcept { return a.rows(); }
    std::size_t d_in() const noexcept { return b.cols(); }
};

inline constexpr double kInitStddev = 0.02;
inline constexpr std::size_t kDefaultRank = 8;

/// A ~ N(0, 0.02^2) elementwise, B = 0, so a fresh adapter leaves W unchanged.
inline LoraAdapter init_adapter(std::size_t d_out, std::size_t d_in, std::size_t r, std::uint64_t seed,
                                double alpha = 1.0) {
    if (r < 1 || r >= std::min(d_out, d_in)) {
        throw ConfigError("invalid LoRA rank " + std::to_string(r) + ": need 1 <= r < min(d_out, d_in)");
    }
    LoraAdapter ad{Matrix(d_out, r), Matrix(r, d_in), alpha, seed};
    Rng rng(derive_seed(seed, 0x10A));
    for (double& v : ad.a.data()) v = rng.normal(0.0, kInitStddev);
    return ad;
}

inline LoraAdapter init_adapter(std::size_t d, std::size_t r, std::uint64_t seed) { return init_adapter(d, d, r, seed); }

inline void check_shapes(const Matrix& w, const LoraAdapter& ad) {
    if (ad.a.cols() != ad.b.rows() || w.rows() != ad.d_out() || w.cols() != ad.d_in()) {
        throw StageError("LoRA shape mismatch: W is " + std::to_string(w.rows()) + "x" + std::to_string(w.cols()) +
                         ", adapter is " + std::to_string(ad.d_out()) + "x" + std::to_string(ad.rank()) + " * " +
                         std::to_string(ad.b.rows()) + "x" + std::to_string(ad.d_in()));
    }
}

/// W + alpha * A B; W itself is not modified.
inline Matrix merge(const Matrix& w, const LoraAdapter& ad, FlopCounter* counter = nullptr) {
    check_shapes(w, ad);
    const Matrix ab = matmul(ad.a, ad.b, counter);
    Matrix out = w;
    auto o = out.data();
    const auto p = ab.data();
    for (std::size_t i = 0; i < o.size(); ++i) o[i] += ad.alpha * p[i];
    if (counter) counter->flops += 2ull * o.size();
    return out;
}

/// W x + alpha * A (B x), never forming A B.
inline std::vector<double> forward(const Matrix& w, const LoraAdapter& ad, std::span<const double> x,
                                   FlopCounter* counter = nullptr) {
    check_shapes(w, ad);
    if (x.size() != w.cols()) throw StageError("LoRA forward: input length mismatch");
    std::vector<double> y = matvec(w, x, counter);
    const std::vector<double> bx = matvec(ad.b, x, counter);
    const std::vector<double> abx = matvec(ad.a, bx, counter);
    for (std::size_t i = 0; i < y.size(); ++i) y[i] += ad.alpha * abx[i];
    if (counter) counter->flops += 2ull * y.size();
    return y;
}

struct ParamBudget {
    std::uint64_t adapter_params = 0;
    std::uint64_t full_params = 0;
    double ratio = 0.0;
};

inline ParamBudget param_budget(std::uint64_t d_out, std::uint64_t d_in, std::uint64_t r) {
    if (d_out == 0 || d_in == 0) throw ConfigError("param_budget: dimensions must be positive");
    ParamBudget b;
    b.adapter_params = r * (d_out + d_in);
    b.full_params = d_out * d_in;
    b.ratio = static_cast<double>(b.adapter_params) / static_cast<double>(b.full_params);
    return b;
}

inline ParamBudget param_budget(std::uint64_t d, std::uint64_t r) { return param_budget(d, d, r); }

// --- files ------------------------------------------------------------------

inline void save_matrix(const std::filesystem::path& path, const Matrix& m) {
    write_blob(path, {{"kind", "matrix"}, {"d_out", m.rows()}, {"d_in", m.cols()}}, m.data());
}

inline Matrix load_matrix(const std::filesystem::path& path) {
    const BlobFile blob = read_blob(path);
    expect_kind(blob, "matrix");
    const auto rows = blob.header.at("d_out").get<std::size_t>();
    const auto cols = blob.header.at("d_in").get<std::size_t>();
    if (blob.payload.size() != rows * cols) throw IoError("matrix payload does not match its shape");
    return Matrix(rows, cols, blob.payload);
}

/// Adapter file: header {d_out, d_in, r, alpha, seed}, payload A then B.
inline void save_adapter(const std::filesystem::path& path, const LoraAdapter& ad) {
    std::vector<double> payload(ad.a.data().begin(), ad.a.data().end());
    payload.insert(payload.end(), ad.b.data().begin(), ad.b.data().end());
    write_blob(path,
               {{"kind", "lora_adapter"},
                {"d_out", ad.d_out()},
                {"d_in", ad.d_in()},
                {"r", ad.rank()},
                {"alpha", ad.alpha},
                {"seed", ad.seed}},
               payload);
}

inline LoraAdapter load_adapter(const std::filesystem::path& path) {
    const BlobFile blob = read_blob(path);
    expect_kind(blob, "lora_adapter");
    const auto d_out = blob.header.at("d_out").get<std::size_t>();
    const auto d_in = blob.header.at("d_in").get<std::size_t>();
    const auto r = blob.header.at("r").get<std::size_t>();
    if (blob.payload.size() != r * (d_out + d_in)) throw IoError("adapter payload does not match its shape");
    std::vector<double> a(blob.payload.begin(), blob.payload.begin() + static_cast<std::ptrdiff_t>(d_out * r));
    std::vector<double> b(blob.payload.begin() + static_cast<std::ptrdiff_t>(d_out * r), blob.payload.end());
    return {Matrix(d_out, r, std::move(a)), Matrix(r, d_in, std::move(b)), blob.header.value("alpha", 1.0),
            blob.header.value("seed", std::uint64_t{0})};
}

} // namespace llambda::lora
