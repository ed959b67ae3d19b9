// Copyright 2026 The epistyle Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "epistyle/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace epistyle {
namespace {

constexpr char kMagic[5] = {'E', 'P', 'S', 'T', '1'};

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

template <typename T>
void put(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get(std::istream& is, const std::filesystem::path& path) {
  T value{};
  if (!is.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw Error("checkpoint " + path.string() + " is truncated");
  }
  return value;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     std::span<const Parameter* const> params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write checkpoint " + path.string());
  os.write(kMagic, sizeof(kMagic));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(params.size()));
  for (const Parameter* p : params) {
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put<std::uint32_t>(os, static_cast<std::uint32_t>(p->value.rank()));
    for (std::size_t d : p->value.shape()) put<std::uint64_t>(os, d);
    for (Real v : p->value.values()) put<float>(os, static_cast<float>(v));
  }
  if (!os) throw Error("failed writing checkpoint " + path.string());
}

std::map<std::string, Tensor> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot read checkpoint " + path.string());
  char magic[5];
  if (!is.read(magic, 5) || std::memcmp(magic, kMagic, 5) != 0) {
    throw ValidationError(path.string() + " is not an EPST1 checkpoint");
  }
  const auto blocks = get<std::uint32_t>(is, path);
  std::map<std::string, Tensor> out;
  for (std::uint32_t b = 0; b < blocks; ++b) {
    const auto name_len = get<std::uint32_t>(is, path);
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw Error("checkpoint " + path.string() + " is truncated");
    const auto rank = get<std::uint32_t>(is, path);
    Shape shape;
    std::size_t count = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape.push_back(static_cast<std::size_t>(get<std::uint64_t>(is, path)));
      count *= shape.back();
    }
    std::vector<Real> data(count);
    for (std::size_t i = 0; i < count; ++i) data[i] = static_cast<Real>(get<float>(is, path));
    out.emplace(std::move(name), Tensor(std::move(shape), std::move(data)));
  }
  return out;
}

void restore_parameters(const std::map<std::string, Tensor>& stored,
                        std::span<Parameter* const> params) {
  for (Parameter* p : params) {
    auto it = stored.find(p->name);
    if (it == stored.end()) throw ValidationError("checkpoint lacks parameter '" + p->name + "'");
    if (it->second.shape() != p->value.shape()) {
      throw ValidationError("checkpoint parameter '" + p->name + "' has shape " +
                            shape_string(it->second.shape()) + ", model expects " +
                            shape_string(p->value.shape()));
    }
    p->value = it->second;
  }
}

}  // namespace epistyle
