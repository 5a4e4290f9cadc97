#pragma once

#include <Eigen/Dense>

#include <initializer_list>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "knpl/error.hpp"

namespace knpl::ad {

// All numeric payloads are row-major 64-bit matrices. Rank-0 and rank-1
// tensors are stored as 1x1 and 1xN matrices; the logical shape is kept
// separately so the distinction survives round trips.
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

// Immutable dense tensor. Copies are cheap (shared payload); the payload is
// never mutated after construction, so sharing across threads is safe.
class Tensor {
public:
    Tensor() : payload_(std::make_shared<const Payload>()) {}

    static Tensor scalar(double v) {
        Mat m(1, 1);
        m(0, 0) = v;
        return Tensor({}, std::move(m));
    }

    static Tensor vector(std::vector<double> v) {
        Mat m(1, static_cast<Index>(v.size()));
        for (Index i = 0; i < m.cols(); ++i) m(0, i) = v[static_cast<std::size_t>(i)];
        return Tensor({static_cast<Index>(v.size())}, std::move(m));
    }

    static Tensor matrix(Mat m) {
        const Index r = m.rows(), c = m.cols();
        return Tensor({r, c}, std::move(m));
    }

    static Tensor zeros(std::vector<Index> shape) {
        auto [r, c] = matrix_dims(shape);
        return Tensor(std::move(shape), Mat::Zero(r, c));
    }

    // Explicit logical shape with a matching payload; used when an op must
    // preserve rank across matrix-level arithmetic.
    static Tensor of_shape(std::vector<Index> shape, Mat values) {
        return Tensor(std::move(shape), std::move(values));
    }

    static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows) {
        const Index r = static_cast<Index>(rows.size());
        const Index c = r > 0 ? static_cast<Index>(rows.begin()->size()) : 0;
        Mat m(r, c);
        Index i = 0;
        for (const auto& row : rows) {
            if (static_cast<Index>(row.size()) != c)
                raise(ErrorKind::Shape, "ragged row in tensor literal");
            Index j = 0;
            for (double v : row) m(i, j++) = v;
            ++i;
        }
        return matrix(std::move(m));
    }

    const std::vector<Index>& shape() const { return payload_->shape; }
    int rank() const { return static_cast<int>(payload_->shape.size()); }
    Index size() const { return payload_->values.size(); }

    bool is_scalar() const { return rank() == 0; }

    // Underlying matrix view: (1,1) for scalars, (1,N) for vectors.
    const Mat& mat() const { return payload_->values; }

    Index rows() const { return payload_->values.rows(); }
    Index cols() const { return payload_->values.cols(); }

    double item() const {
        if (size() != 1)
            raise(ErrorKind::Shape, "item() on tensor with " + std::to_string(size()) + " elements");
        return payload_->values(0, 0);
    }

    double at(Index r, Index c) const { return payload_->values(r, c); }
    double at(Index i) const { return payload_->values(0, i); }

    // New payload, same logical shape (and therefore same matrix dims).
    Tensor with_same_shape(Mat values) const {
        return Tensor(payload_->shape, std::move(values));
    }

    bool all_finite() const { return payload_->values.allFinite(); }

    bool same_shape(const Tensor& other) const { return shape() == other.shape(); }

    bool bit_equal(const Tensor& other) const {
        if (shape() != other.shape()) return false;
        return std::memcmp(mat().data(), other.mat().data(),
                           sizeof(double) * static_cast<std::size_t>(size())) == 0;
    }

    std::string shape_string() const {
        std::ostringstream os;
        os << '(';
        for (std::size_t i = 0; i < payload_->shape.size(); ++i) {
            if (i) os << ',';
            os << payload_->shape[i];
        }
        os << ')';
        return os.str();
    }

private:
    struct Payload {
        std::vector<Index> shape;
        Mat values;
        Payload() : values(1, 1) { values(0, 0) = 0.0; }
        Payload(std::vector<Index> s, Mat v) : shape(std::move(s)), values(std::move(v)) {}
    };

    static std::pair<Index, Index> matrix_dims(const std::vector<Index>& shape) {
        if (shape.size() > 2)
            raise(ErrorKind::Shape, "rank > 2 tensors are not supported");
        if (shape.empty()) return {1, 1};
        if (shape.size() == 1) return {1, shape[0]};
        return {shape[0], shape[1]};
    }

    Tensor(std::vector<Index> shape, Mat values) {
        auto [r, c] = matrix_dims(shape);
        if (values.rows() != r || values.cols() != c)
            raise(ErrorKind::Shape, "payload does not match declared shape");
        std::size_t n = 1;
        for (Index d : shape) {
            if (d < 0) raise(ErrorKind::Shape, "negative dimension");
            n *= static_cast<std::size_t>(d);
        }
        if (static_cast<std::size_t>(values.size()) != n)
            raise(ErrorKind::Shape, "element count does not match shape product");
        payload_ = std::make_shared<const Payload>(std::move(shape), std::move(values));
    }

    std::shared_ptr<const Payload> payload_;
};

} // namespace knpl::ad
