#pragma once

#include <algorithm>
#include <array>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <openssl/evp.h>

#include <json.hpp>

#include "l96/errors.hpp"
#include "l96/ode.hpp"

namespace l96 {

using Json = nlohmann::json;

inline std::string sha256_hex(const std::string& data) {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), digest.data(), &len, EVP_sha256(), nullptr) != 1)
    throw std::runtime_error("sha256 failed");
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out += hex[digest[i] >> 4];
    out += hex[digest[i] & 0xf];
  }
  return out;
}

// Hash of a config view; object keys are sorted, so equal views hash equally.
inline std::string config_hash(const Json& view) { return sha256_hex(view.dump()); }

// Shortest decimal that round-trips, independent of the C locale.
inline std::string fmt(double v) {
  std::array<char, 32> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

inline std::string fmt(const std::optional<double>& v) { return v ? fmt(*v) : std::string(); }

// Comma-separated table: one header row, then rows.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : width_(header.size()) { row_strings(std::move(header)); }

  void row_strings(std::vector<std::string> cells) {
    if (cells.size() != width_) throw InvalidArgument("csv row width does not match the header");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ += ',';
      out_ += cells[i];
    }
    out_ += '\n';
  }

  void row(const std::string& first, const std::vector<double>& values) {
    std::vector<std::string> cells{first};
    for (double v : values) cells.push_back(fmt(v));
    row_strings(std::move(cells));
  }

  const std::string& text() const { return out_; }

 private:
  std::size_t width_;
  std::string out_;
};

// Node-indexed matrix: header "row,c0,c1,...", one row per matrix row.
inline std::string matrix_csv(const Matrix& m) {
  std::vector<std::string> header{"row"};
  for (Index j = 0; j < m.cols(); ++j) header.push_back("c" + std::to_string(j));
  CsvTable t(header);
  for (Index i = 0; i < m.rows(); ++i) {
    std::vector<double> r(static_cast<std::size_t>(m.cols()));
    for (Index j = 0; j < m.cols(); ++j) r[static_cast<std::size_t>(j)] = m(i, j);
    t.row(std::to_string(i), r);
  }
  return t.text();
}

inline Json matrix_json(const Matrix& m) {
  Json rows = Json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    Json r = Json::array();
    for (Index j = 0; j < m.cols(); ++j) r.push_back(m(i, j));
    rows.push_back(std::move(r));
  }
  return rows;
}

inline Matrix matrix_from_json(const Json& rows) {
  const Index n = static_cast<Index>(rows.size());
  const Index m = n ? static_cast<Index>(rows.front().size()) : 0;
  Matrix out(n, m);
  for (Index i = 0; i < n; ++i) {
    if (static_cast<Index>(rows[static_cast<std::size_t>(i)].size()) != m) throw ConfigError("ragged matrix");
    for (Index j = 0; j < m; ++j) out(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)].get<double>();
  }
  return out;
}

inline Json vector_json(const StateVector& v) {
  Json a = Json::array();
  for (Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

inline StateVector vector_from_json(const Json& a) {
  StateVector v(static_cast<Index>(a.size()));
  for (Index i = 0; i < v.size(); ++i) v[i] = a[static_cast<std::size_t>(i)].get<double>();
  return v;
}

// A finished artifact: file name stem plus its full text.
struct Artifact {
  std::string kind;
  std::string hash;  // config hash of the generating view
  std::string extension;
  std::string text;

  std::string file_name() const { return kind + "-" + hash.substr(0, 16) + extension; }
};

// JSON artifact: {kind, config, config_hash, payload, payload_hash}.
inline Artifact json_artifact(const std::string& kind, const Json& view, const Json& payload) {
  Json doc;
  doc["kind"] = kind;
  doc["config"] = view;
  doc["config_hash"] = config_hash(view);
  doc["payload"] = payload;
  doc["payload_hash"] = sha256_hex(payload.dump());
  return {kind, doc["config_hash"].get<std::string>(), ".json", doc.dump(2) + "\n"};
}

// CSV artifact: '#' provenance lines followed by the table.
inline Artifact csv_artifact(const std::string& kind, const Json& view, const std::string& table) {
  const std::string hash = config_hash(view);
  std::string text = "# kind=" + kind + "\n# config_hash=" + hash + "\n# payload_hash=" + sha256_hex(table) +
                     "\n# config=" + view.dump() + "\n" + table;
  return {kind, hash, ".csv", std::move(text)};
}

struct VerifyResult {
  bool ok = false;
  std::string message;
};

// Re-hashes the embedded config and payload of an artifact file's text.
inline VerifyResult verify_artifact_text(const std::string& name, const std::string& text) {
  try {
    if (name.ends_with(".json")) {
      const Json doc = Json::parse(text);
      if (config_hash(doc.at("config")) != doc.at("config_hash").get<std::string>())
        return {false, "config hash mismatch"};
      if (sha256_hex(doc.at("payload").dump()) != doc.at("payload_hash").get<std::string>())
        return {false, "payload hash mismatch"};
      if (name.find(doc.at("config_hash").get<std::string>().substr(0, 16)) == std::string::npos)
        return {false, "file name does not match the config hash"};
      return {true, "ok"};
    }
    if (name.ends_with(".csv")) {
      std::istringstream in(text);
      std::string line, hash, payload_hash, config;
      std::size_t consumed = 0;
      while (in.peek() == '#' && std::getline(in, line)) {
        consumed += line.size() + 1;
        if (line.starts_with("# config_hash=")) hash = line.substr(14);
        else if (line.starts_with("# payload_hash=")) payload_hash = line.substr(15);
        else if (line.starts_with("# config=")) config = line.substr(9);
      }
      if (hash.empty() || payload_hash.empty() || config.empty()) return {false, "missing provenance lines"};
      if (config_hash(Json::parse(config)) != hash) return {false, "config hash mismatch"};
      if (sha256_hex(text.substr(consumed)) != payload_hash) return {false, "payload hash mismatch"};
      if (name.find(hash.substr(0, 16)) == std::string::npos) return {false, "file name does not match the config hash"};
      return {true, "ok"};
    }
  } catch (const std::exception& e) {
    return {false, std::string("unreadable: ") + e.what()};
  }
  return {false, "not an artifact"};
}

// Content-addressed artifact directory. Writes go to a temp file that is
// renamed into place; an existing file with different content is a conflict.
class ArtifactStore {
 public:
  explicit ArtifactStore(std::filesystem::path root) : root_(std::move(root)) {}

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path path_of(const Artifact& a) const { return root_ / a.file_name(); }

  std::optional<std::string> read(const std::string& file_name) const {
    std::ifstream in(root_ / file_name, std::ios::binary);
    if (!in) return std::nullopt;
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
  }

  // Returns true when the file was written, false when an identical copy existed.
  bool write(const Artifact& a) const {
    std::error_code ec;
    std::filesystem::create_directories(root_, ec);
    if (ec) throw StoreConflict("cannot create output directory " + root_.string() + ": " + ec.message());
    const auto target = path_of(a);
    if (auto existing = read(a.file_name())) {
      if (*existing == a.text) return false;
      throw StoreConflict("artifact " + target.string() + " exists with different content");
    }
    const auto tmp = root_ / ("." + a.file_name() + ".tmp");
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      out << a.text;
      out.flush();
      if (!out) {
        std::filesystem::remove(tmp, ec);
        throw StoreConflict("failed writing " + tmp.string());
      }
    }
    std::filesystem::rename(tmp, target, ec);
    if (ec) {
      std::filesystem::remove(tmp, ec);
      throw StoreConflict("failed to move artifact into place: " + target.string());
    }
    return true;
  }

  std::vector<std::string> list() const {
    std::vector<std::string> names;
    std::error_code ec;
    if (!std::filesystem::is_directory(root_, ec)) return names;
    for (const auto& e : std::filesystem::directory_iterator(root_)) {
      const std::string n = e.path().filename().string();
      if (e.is_regular_file() && !n.starts_with(".") && (n.ends_with(".json") || n.ends_with(".csv")))
        names.push_back(n);
    }
    std::sort(names.begin(), names.end());
    return names;
  }

 private:
  std::filesystem::path root_;
};

}  // namespace l96
