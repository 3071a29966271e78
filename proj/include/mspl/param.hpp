#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "mspl/mat.hpp"

namespace mspl {

// Parameter group tags. TEXT_BACKBONE covers everything inherited from the
// text base model; SPEECH_NEW the freshly added speech components.
enum class Group : uint8_t { TextBackbone, SpeechNew };

inline const char* group_name(Group g) {
  return g == Group::TextBackbone ? "text_backbone" : "speech_new";
}

template <class T>
struct ParamTensor {
  std::string name;
  Group group = Group::TextBackbone;
  Mat<T> value;
  Mat<T> grad;
  bool trainable = true;

  // AdamW state; allocated only while trainable.
  Mat<T> moment1;
  Mat<T> moment2;
  int64_t step = 0;

  mutable uint64_t reads = 0;

  void set_trainable(bool on) {
    if (on == trainable) {
      return;
    }
    trainable = on;
    if (on) {
      moment1 = Mat<T>::zeros(value.rows, value.cols);
      moment2 = Mat<T>::zeros(value.rows, value.cols);
      step = 0;
    } else {
      moment1 = Mat<T>();
      moment2 = Mat<T>();
      step = 0;
    }
  }
};

// Named tensors in registration order with stable addresses.
template <class T>
class ParamStore {
 public:
  ParamTensor<T>& add(const std::string& name, int rows, int cols, Group group) {
    MSPL_CHECK(index_.count(name) == 0, "duplicate parameter name: ", name);
    auto t = std::make_unique<ParamTensor<T>>();
    t->name = name;
    t->group = group;
    t->value = Mat<T>(rows, cols);
    t->grad = Mat<T>(rows, cols);
    t->moment1 = Mat<T>(rows, cols);
    t->moment2 = Mat<T>(rows, cols);
    index_[name] = tensors_.size();
    tensors_.push_back(std::move(t));
    return *tensors_.back();
  }

  bool has(const std::string& name) const { return index_.count(name) != 0; }

  ParamTensor<T>& at(const std::string& name) {
    auto it = index_.find(name);
    MSPL_CHECK(it != index_.end(), "unknown parameter name: ", name);
    return *tensors_[it->second];
  }

  const ParamTensor<T>& at(const std::string& name) const {
    auto it = index_.find(name);
    MSPL_CHECK(it != index_.end(), "unknown parameter name: ", name);
    return *tensors_[it->second];
  }

  size_t size() const { return tensors_.size(); }

  size_t index_of(const std::string& name) const {
    auto it = index_.find(name);
    MSPL_CHECK(it != index_.end(), "unknown parameter name: ", name);
    return it->second;
  }

  ParamTensor<T>& operator[](size_t i) { return *tensors_[i]; }
  const ParamTensor<T>& operator[](size_t i) const { return *tensors_[i]; }

  std::vector<std::string> sorted_names() const {
    std::vector<std::string> names;
    names.reserve(tensors_.size());
    for (const auto& [name, idx] : index_) {
      names.push_back(name);
    }
    return names;  // std::map iterates lexicographically
  }

  void zero_grads() {
    for (auto& t : tensors_) {
      if (t->trainable) {
        t->grad.fill(T(0));
      }
    }
  }

  void scale_grads(T c) {
    for (auto& t : tensors_) {
      if (t->trainable) {
        t->grad.scale_inplace(c);
      }
    }
  }

  size_t num_values() const {
    size_t n = 0;
    for (const auto& t : tensors_) {
      n += t->value.size();
    }
    return n;
  }

 private:
  std::vector<std::unique_ptr<ParamTensor<T>>> tensors_;
  std::map<std::string, size_t> index_;
};

}  // namespace mspl
