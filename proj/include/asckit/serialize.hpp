#pragma once

// Shared container for model checkpoints and feature caches: an 8-byte magic,
// a json header (format version + metadata + blob directory), then raw
// little-endian blobs in directory order.

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "asckit/common.hpp"

namespace asckit::io {

using json = nlohmann::json;

class BlobWriter {
 public:
  BlobWriter(std::string magic, json header) : magic_(std::move(magic)), header_(std::move(header)) {
    if (magic_.size() != 8) throw ConfigError("blob magic must be 8 bytes");
  }

  void add_f64(const std::string& name, const std::vector<double>& v) {
    add(name, "f64", v.data(), v.size() * sizeof(double), v.size());
  }
  void add_f32(const std::string& name, const std::vector<float>& v) {
    add(name, "f32", v.data(), v.size() * sizeof(float), v.size());
  }
  void add_i32(const std::string& name, const std::vector<std::int32_t>& v) {
    add(name, "i32", v.data(), v.size() * sizeof(std::int32_t), v.size());
  }

  void write(const std::string& path) {
    json dir = json::array();
    for (const auto& b : blobs_) {
      dir.push_back({{"name", b.name}, {"dtype", b.dtype}, {"count", b.count}});
    }
    json head = header_;
    head["blobs"] = dir;
    const std::string hs = head.dump();
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write file: " + path);
    out.write(magic_.data(), 8);
    const std::uint64_t n = hs.size();
    out.write(reinterpret_cast<const char*>(&n), 8);
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& b : blobs_) {
      out.write(b.bytes.data(), static_cast<std::streamsize>(b.bytes.size()));
    }
    if (!out) throw DataError("short write: " + path);
  }

 private:
  struct Blob {
    std::string name, dtype;
    std::uint64_t count;
    std::vector<char> bytes;
  };

  void add(const std::string& name, const char* dtype, const void* data, std::size_t len,
           std::uint64_t count) {
    Blob b;
    b.name = name;
    b.dtype = dtype;
    b.count = count;
    b.bytes.assign(static_cast<const char*>(data), static_cast<const char*>(data) + len);
    blobs_.push_back(std::move(b));
  }

  std::string magic_;
  json header_;
  std::vector<Blob> blobs_;
};

class BlobReader {
 public:
  BlobReader(const std::string& path, const std::string& magic) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open file: " + path);
    char m[8];
    if (!in.read(m, 8) || std::string(m, 8) != magic) {
      throw DataError("bad magic in " + path + " (expected " + magic + ")");
    }
    std::uint64_t n = 0;
    in.read(reinterpret_cast<char*>(&n), 8);
    std::string hs(n, '\0');
    in.read(hs.data(), static_cast<std::streamsize>(n));
    if (!in) throw DataError("truncated header in " + path);
    header_ = json::parse(hs);
    for (const auto& d : header_.at("blobs")) {
      Blob b;
      b.name = d.at("name").get<std::string>();
      b.dtype = d.at("dtype").get<std::string>();
      b.count = d.at("count").get<std::uint64_t>();
      const std::size_t width = b.dtype == "f64" ? 8 : 4;
      b.bytes.resize(b.count * width);
      in.read(b.bytes.data(), static_cast<std::streamsize>(b.bytes.size()));
      if (!in) throw DataError("truncated blob '" + b.name + "' in " + path);
      blobs_.push_back(std::move(b));
    }
  }

  const json& header() const { return header_; }

  std::vector<double> f64(const std::string& name) const {
    const Blob& b = find(name, "f64");
    std::vector<double> v(b.count);
    std::memcpy(v.data(), b.bytes.data(), b.bytes.size());
    return v;
  }
  std::vector<float> f32(const std::string& name) const {
    const Blob& b = find(name, "f32");
    std::vector<float> v(b.count);
    std::memcpy(v.data(), b.bytes.data(), b.bytes.size());
    return v;
  }
  std::vector<std::int32_t> i32(const std::string& name) const {
    const Blob& b = find(name, "i32");
    std::vector<std::int32_t> v(b.count);
    std::memcpy(v.data(), b.bytes.data(), b.bytes.size());
    return v;
  }

 private:
  struct Blob {
    std::string name, dtype;
    std::uint64_t count;
    std::vector<char> bytes;
  };

  const Blob& find(const std::string& name, const char* dtype) const {
    for (const auto& b : blobs_) {
      if (b.name == name) {
        if (b.dtype != dtype) throw DataError("blob '" + name + "' has dtype " + b.dtype);
        return b;
      }
    }
    throw DataError("missing blob: " + name);
  }

  json header_;
  std::vector<Blob> blobs_;
};

}  // namespace asckit::io
