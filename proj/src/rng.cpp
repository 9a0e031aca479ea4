#include "labeldiff/rng.hpp"

#include <sstream>

#include "labeldiff/errors.hpp"

namespace labeldiff {

std::string serialize_rng(const Rng& rng) {
  std::ostringstream out;
  out << rng;
  return out.str();
}

Rng deserialize_rng(const std::string& text) {
  std::istringstream in(text);
  Rng rng;
  in >> rng;
  if (in.fail()) throw DataError("malformed random engine state");
  return rng;
}

}  // namespace labeldiff
