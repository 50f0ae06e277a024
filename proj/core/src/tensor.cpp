#include "prodcat/tensor.hpp"

namespace prodcat {

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) {
      out += "x";
    }
    out += std::to_string(shape[i]);
  }
  out += "]";
  return out;
}

}  // namespace prodcat
