#pragma once

#include <algorithm>
#include <cstddef>
#include <memory>
#include <type_traits>
#include <vector>

#include "asckit/common.hpp"

namespace asckit::nn {

/// Allocator that default-initializes on resize; activation buffers are
/// written in full right after allocation, so the vector's zero-fill is
/// wasted memory bandwidth at these sizes.
template <typename T, typename A = std::allocator<T>>
struct default_init_allocator : public A {
  using a_t = std::allocator_traits<A>;
  template <typename U>
  struct rebind {
    using other = default_init_allocator<U, typename a_t::template rebind_alloc<U>>;
  };
  using A::A;
  template <typename U>
  void construct(U* ptr) noexcept(std::is_nothrow_default_constructible_v<U>) {
    ::new (static_cast<void*>(ptr)) U;
  }
  template <typename U, typename... Args>
  void construct(U* ptr, Args&&... args) {
    a_t::construct(static_cast<A&>(*this), ptr, std::forward<Args>(args)...);
  }
};

template <typename T>
using RawVec = std::vector<T, default_init_allocator<T>>;

/// Dense 4-D tensor, batch x channels x time x frequency, row-major.
/// The (n,c,h,w) constructor leaves values uninitialized; use zero() when a
/// cleared buffer is needed.
template <typename T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  RawVec<T> v;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_) : n(n_), c(c_), h(h_), w(w_) {
    v.resize(static_cast<std::size_t>(n_) * c_ * h_ * w_);
  }

  void zero() { std::fill(v.begin(), v.end(), T{0}); }

  std::size_t size() const { return v.size(); }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }

  T* sample(int i) { return v.data() + static_cast<std::size_t>(i) * sample_size(); }
  const T* sample(int i) const { return v.data() + static_cast<std::size_t>(i) * sample_size(); }

  T& at(int i, int ch, int y, int x) {
    return v[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }
  T at(int i, int ch, int y, int x) const {
    return v[((static_cast<std::size_t>(i) * c + ch) * h + y) * w + x];
  }

  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
};

}  // namespace asckit::nn
