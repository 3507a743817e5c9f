#pragma once

#include <string>

#include "lcnet/tensor.hpp"

namespace lcnet {

// Fixture file: one UTF-8 JSON header line terminated by '\n'
// ({"shape":[...],"layout":"...","dtype":"f64","version":1})
// followed by the raw little-endian IEEE-754 float64 payload.
// load(save(t)) reproduces t bit-exactly.
void save_fixture(const Tensor& t, const std::string& path);
Tensor load_fixture(const std::string& path);

}  // namespace lcnet
