// SPDX-License-Identifier: Apache-2.0
//
// File access, content hashes and the on-disk dataset layout.
#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <openssl/evp.h>

#include "clocs/common.hpp"

namespace clocs::io {

namespace fs = std::filesystem;

inline std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Writes to a sibling temp file, then renames over the target.
inline void write_file_atomic(const fs::path& path, std::string_view content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) throw DataError("cannot rename " + tmp.string() + ": " + ec.message());
}

/// Hash of `blob <size>\0<content>`, as git computes object ids.
inline std::string git_blob_sha1(std::string_view content) {
  const std::string header = "blob " + std::to_string(content.size()) + '\0';
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  const bool ok = ctx && EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) &&
                  EVP_DigestUpdate(ctx, header.data(), header.size()) &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) && EVP_DigestFinal_ex(ctx, md, &len);
  EVP_MD_CTX_free(ctx);
  if (!ok) throw ContractError("SHA-1 digest failed");
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    const unsigned char b = md[i];
    out += kHex[b >> 4];
    out += kHex[b & 15];
  }
  return out;
}

inline std::string hash_file(const fs::path& path) { return git_blob_sha1(read_file(path)); }

/// Frame ids are the stems of `*.txt` files in `dir`, sorted.
inline std::vector<std::string> list_frame_ids(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("not a directory: " + dir.string());
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".txt") ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

/// Dataset directory: calib/, label_2/, det2d/, det3d/ and optionally
/// det3d_sigmoid/, one `<frameId>.txt` per frame in each.
struct DatasetLayout {
  fs::path root;

  fs::path calib(const std::string& id) const { return root / "calib" / (id + ".txt"); }
  fs::path label(const std::string& id) const { return root / "label_2" / (id + ".txt"); }
  fs::path det2d(const std::string& id) const { return root / "det2d" / (id + ".txt"); }
  fs::path det3d(const std::string& id, const std::string& dir = "det3d") const {
    return root / dir / (id + ".txt");
  }
};

}  // namespace clocs::io
