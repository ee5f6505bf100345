#pragma once

#include <algorithm>
#include <cstddef>

#include <Eigen/Core>

namespace focusfree::kernels {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

/// Geometry of one 2D correlation window sweep. `in_*` describes the padded
/// image being sampled and `out_*` the grid of window positions.
struct ConvGeometry {
    std::size_t channels = 0;
    std::size_t in_h = 0, in_w = 0;
    std::size_t kernel_h = 0, kernel_w = 0;
    std::size_t stride = 1, pad = 0, dilation = 1;
    std::size_t out_h = 0, out_w = 0;

    [[nodiscard]] std::size_t col_rows() const noexcept { return channels * kernel_h * kernel_w; }
    [[nodiscard]] std::size_t col_cols() const noexcept { return out_h * out_w; }
};

/// Unfolds image [C, H, W] into col [C*kh*kw, out_h*out_w].
template <typename T>
void im2col(const T* image, const ConvGeometry& g, T* col) {
    const auto ih = static_cast<std::ptrdiff_t>(g.in_h);
    const auto iw = static_cast<std::ptrdiff_t>(g.in_w);
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.channels; ++c) {
        const T* plane = image + c * g.in_h * g.in_w;
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
            for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++row) {
                T* dst = col + row * g.col_cols();
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + ky * g.dilation) -
                                   static_cast<std::ptrdiff_t>(g.pad);
                    T* out_row = dst + oy * g.out_w;
                    if (y < 0 || y >= ih) {
                        std::fill(out_row, out_row + g.out_w, T{0});
                        continue;
                    }
                    const T* src_row = plane + y * iw;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + kx * g.dilation) -
                                       static_cast<std::ptrdiff_t>(g.pad);
                        out_row[ox] = (x < 0 || x >= iw) ? T{0} : src_row[x];
                    }
                }
            }
        }
    }
}

/// Adjoint of im2col: scatters col back onto image [C, H, W], accumulating.
template <typename T>
void col2im_add(const T* col, const ConvGeometry& g, T* image) {
    const auto ih = static_cast<std::ptrdiff_t>(g.in_h);
    const auto iw = static_cast<std::ptrdiff_t>(g.in_w);
    std::size_t row = 0;
    for (std::size_t c = 0; c < g.channels; ++c) {
        T* plane = image + c * g.in_h * g.in_w;
        for (std::size_t ky = 0; ky < g.kernel_h; ++ky) {
            for (std::size_t kx = 0; kx < g.kernel_w; ++kx, ++row) {
                const T* src = col + row * g.col_cols();
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    const auto y = static_cast<std::ptrdiff_t>(oy * g.stride + ky * g.dilation) -
                                   static_cast<std::ptrdiff_t>(g.pad);
                    if (y < 0 || y >= ih) {
                        continue;
                    }
                    T* dst_row = plane + y * iw;
                    const T* col_row = src + oy * g.out_w;
                    for (std::size_t ox = 0; ox < g.out_w; ++ox) {
                        const auto x = static_cast<std::ptrdiff_t>(ox * g.stride + kx * g.dilation) -
                                       static_cast<std::ptrdiff_t>(g.pad);
                        if (x >= 0 && x < iw) {
                            dst_row[x] += col_row[ox];
                        }
                    }
                }
            }
        }
    }
}

/// out[M,N] (+)= a[M,K] * b[K,N], all row-major.
template <typename T>
void gemm(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    ConstMatrixMap<T> A(a, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
    ConstMatrixMap<T> B(b, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    MatrixMap<T> C(out, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    if (accumulate) {
        C.noalias() += A * B;
    } else {
        C.noalias() = A * B;
    }
}

/// out[M,N] (+)= a[K,M]^T * b[K,N].
template <typename T>
void gemm_at(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    ConstMatrixMap<T> A(a, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(m));
    ConstMatrixMap<T> B(b, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(n));
    MatrixMap<T> C(out, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    if (accumulate) {
        C.noalias() += A.transpose() * B;
    } else {
        C.noalias() = A.transpose() * B;
    }
}

/// out[M,N] (+)= a[M,K] * b[N,K]^T.
template <typename T>
void gemm_bt(const T* a, const T* b, T* out, std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    ConstMatrixMap<T> A(a, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(k));
    ConstMatrixMap<T> B(b, static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(k));
    MatrixMap<T> C(out, static_cast<Eigen::Index>(m), static_cast<Eigen::Index>(n));
    if (accumulate) {
        C.noalias() += A * B.transpose();
    } else {
        C.noalias() = A * B.transpose();
    }
}

} // namespace focusfree::kernels
