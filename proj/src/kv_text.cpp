#include "tierkv/kv_text.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace tierkv {

namespace {

std::string_view Trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t' || s.front() == '\r')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
    s.remove_suffix(1);
  }
  return s;
}

}  // namespace

Status KvText::Parse(std::string_view text, KvText* out) {
  KvText doc;
  size_t line_no = 0;
  while (!text.empty()) {
    size_t nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view() : text.substr(nl + 1);
    ++line_no;
    line = Trim(line);
    if (line.empty() || line.front() == '#') continue;
    size_t eq = line.find('=');
    if (eq == std::string_view::npos) {
      return Status::InvalidArgument("line " + std::to_string(line_no) +
                                     ": expected key=value");
    }
    std::string key(Trim(line.substr(0, eq)));
    if (key.empty()) {
      return Status::InvalidArgument("line " + std::to_string(line_no) + ": empty key");
    }
    doc.values_[key] = std::string(Trim(line.substr(eq + 1)));
  }
  *out = std::move(doc);
  return Status::OK();
}

Status KvText::Load(const std::filesystem::path& file, KvText* out) {
  std::string text;
  TIERKV_RETURN_IF_ERROR(ReadWholeFile(file, &text));
  return Parse(text, out).WithContext(file.string());
}

std::optional<std::string> KvText::Get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) return std::nullopt;
  return it->second;
}

Status KvText::GetString(const std::string& key, std::string* out) const {
  auto it = values_.find(key);
  if (it == values_.end()) return Status::NotFound("missing key '" + key + "'");
  *out = it->second;
  return Status::OK();
}

Status KvText::GetInt(const std::string& key, int64_t* out) const {
  std::string v;
  TIERKV_RETURN_IF_ERROR(GetString(key, &v));
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), *out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    return Status::InvalidArgument("key '" + key + "': not an integer: " + v);
  }
  return Status::OK();
}

Status KvText::GetUint(const std::string& key, uint64_t* out) const {
  std::string v;
  TIERKV_RETURN_IF_ERROR(GetString(key, &v));
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), *out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    return Status::InvalidArgument("key '" + key + "': not an unsigned integer: " + v);
  }
  return Status::OK();
}

Status KvText::GetDouble(const std::string& key, double* out) const {
  std::string v;
  TIERKV_RETURN_IF_ERROR(GetString(key, &v));
  try {
    size_t used = 0;
    *out = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
  } catch (const std::exception&) {
    return Status::InvalidArgument("key '" + key + "': not a number: " + v);
  }
  return Status::OK();
}

Status KvText::GetBool(const std::string& key, bool* out) const {
  std::string v;
  TIERKV_RETURN_IF_ERROR(GetString(key, &v));
  if (v == "1" || v == "true" || v == "on" || v == "yes") {
    *out = true;
  } else if (v == "0" || v == "false" || v == "off" || v == "no") {
    *out = false;
  } else {
    return Status::InvalidArgument("key '" + key + "': not a boolean: " + v);
  }
  return Status::OK();
}

Status KvText::MaybeInt(const std::string& key, int64_t* out) const {
  return Has(key) ? GetInt(key, out) : Status::OK();
}
Status KvText::MaybeUint(const std::string& key, uint64_t* out) const {
  return Has(key) ? GetUint(key, out) : Status::OK();
}
Status KvText::MaybeDouble(const std::string& key, double* out) const {
  return Has(key) ? GetDouble(key, out) : Status::OK();
}
Status KvText::MaybeBool(const std::string& key, bool* out) const {
  return Has(key) ? GetBool(key, out) : Status::OK();
}
Status KvText::MaybeString(const std::string& key, std::string* out) const {
  return Has(key) ? GetString(key, out) : Status::OK();
}

Status ReadWholeFile(const std::filesystem::path& file, std::string* out) {
  std::ifstream in(file, std::ios::binary);
  if (!in) return Status::NotFound("cannot open " + file.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  *out = ss.str();
  return Status::OK();
}

Status WriteWholeFile(const std::filesystem::path& file, std::string_view data) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  if (!out) return Status::IOError("cannot write " + file.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) return Status::IOError("short write to " + file.string());
  return Status::OK();
}

Status ParseByteSize(std::string_view text, uint64_t* out) {
  std::string_view digits = text;
  if (digits.size() > 2 && (digits.ends_with("iB") || digits.ends_with("ib"))) digits.remove_suffix(2);
  else if (digits.size() > 1 && (digits.back() == 'B' || digits.back() == 'b')) digits.remove_suffix(1);
  int shift = 0;
  if (!digits.empty()) {
    switch (std::toupper(static_cast<unsigned char>(digits.back()))) {
      case 'K': shift = 10; break;
      case 'M': shift = 20; break;
      case 'G': shift = 30; break;
      case 'T': shift = 40; break;
      default: break;
    }
    if (shift) digits.remove_suffix(1);
  }
  uint64_t v = 0;
  auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), v);
  if (digits.empty() || ec != std::errc() || ptr != digits.data() + digits.size() ||
      (shift && v > (UINT64_MAX >> shift))) {
    return Status::InvalidArgument("bad size '" + std::string(text) + "'");
  }
  *out = v << shift;
  return Status::OK();
}

Status KvText::MaybeBytes(const std::string& key, uint64_t* out) const {
  auto v = Get(key);
  if (!v) return Status::OK();
  return ParseByteSize(*v, out).WithContext("key '" + key + "'");
}

}  // namespace tierkv
