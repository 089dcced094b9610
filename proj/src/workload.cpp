#include "tierkv/workload.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace tierkv {

Status ParseKeyDistribution(std::string_view name, KeyDistribution* out) {
  if (name == "uniform") {
    *out = KeyDistribution::kUniform;
  } else if (name == "zipfian" || name == "zipf") {
    *out = KeyDistribution::kZipfian;
  } else if (name == "latest") {
    *out = KeyDistribution::kLatest;
  } else {
    return Status::InvalidArgument("unknown key distribution '" + std::string(name) + "'");
  }
  return Status::OK();
}

std::string_view KeyDistributionName(KeyDistribution d) {
  switch (d) {
    case KeyDistribution::kUniform: return "uniform";
    case KeyDistribution::kZipfian: return "zipfian";
    case KeyDistribution::kLatest: return "latest";
  }
  return "?";
}

std::string_view OpTypeName(OpType t) {
  switch (t) {
    case OpType::kRead: return "read";
    case OpType::kUpdate: return "update";
    case OpType::kInsert: return "insert";
    case OpType::kScan: return "scan";
    case OpType::kReadModifyWrite: return "rmw";
  }
  return "?";
}

Status WorkloadSpec::Validate() const {
  const double parts[] = {mix.read, mix.update, mix.insert, mix.scan, mix.read_modify_write};
  for (double p : parts) {
    if (p < 0 || p > 1) return Status::InvalidArgument("op fractions must be in [0, 1]");
  }
  if (std::abs(mix.Sum() - 1.0) > 1e-6) {
    return Status::InvalidArgument("op fractions sum to " + std::to_string(mix.Sum()) +
                                   ", not 1");
  }
  if (distribution != KeyDistribution::kUniform && !(theta > 0 && theta < 1)) {
    return Status::InvalidArgument("zipfian theta must be in (0, 1)");
  }
  if (client_threads < 1) return Status::InvalidArgument("client_threads must be >= 1");
  if (max_scan_length < 1) return Status::InvalidArgument("max_scan_length must be >= 1");
  if (record_count == 0 && mix.insert < 1.0 && operation_count > 0) {
    return Status::InvalidArgument("an empty key space only supports insert-only runs");
  }
  return Status::OK();
}

Status WorkloadSpec::Preset(std::string_view letter, WorkloadSpec* out) {
  WorkloadSpec s = *out;
  s.distribution = KeyDistribution::kZipfian;
  s.mix = OpMix{};
  if (letter == "a" || letter == "A") {
    s.mix.read = 0.5;
    s.mix.update = 0.5;
  } else if (letter == "b" || letter == "B") {
    s.mix.read = 0.95;
    s.mix.update = 0.05;
  } else if (letter == "c" || letter == "C") {
    s.mix.read = 1.0;
  } else if (letter == "d" || letter == "D") {
    s.mix.read = 0.95;
    s.mix.insert = 0.05;
    s.distribution = KeyDistribution::kLatest;
  } else if (letter == "e" || letter == "E") {
    s.mix.scan = 0.95;
    s.mix.insert = 0.05;
  } else if (letter == "f" || letter == "F") {
    s.mix.read = 0.5;
    s.mix.read_modify_write = 0.5;
  } else {
    return Status::InvalidArgument("unknown workload '" + std::string(letter) + "'");
  }
  s.name = std::string(1, static_cast<char>(std::tolower(letter[0])));
  *out = s;
  return Status::OK();
}

Status WorkloadSpec::Apply(const KvText& kv) {
  if (auto w = kv.Get("workload")) TIERKV_RETURN_IF_ERROR(Preset(*w, this));
  if (auto d = kv.Get("workload.dist")) TIERKV_RETURN_IF_ERROR(ParseKeyDistribution(*d, &distribution));
  TIERKV_RETURN_IF_ERROR(kv.MaybeDouble("workload.theta", &theta));
  TIERKV_RETURN_IF_ERROR(kv.MaybeUint("workload.records", &record_count));
  TIERKV_RETURN_IF_ERROR(kv.MaybeUint("workload.ops", &operation_count));
  int64_t threads = client_threads, scan = max_scan_length;
  TIERKV_RETURN_IF_ERROR(kv.MaybeInt("workload.threads", &threads));
  TIERKV_RETURN_IF_ERROR(kv.MaybeInt("workload.max_scan", &scan));
  client_threads = static_cast<int>(threads);
  max_scan_length = static_cast<int>(scan);
  uint64_t vb = value_bytes;
  TIERKV_RETURN_IF_ERROR(kv.MaybeBytes("workload.value_bytes", &vb));
  value_bytes = vb;
  TIERKV_RETURN_IF_ERROR(kv.MaybeUint("workload.seed", &seed));
  bool custom_mix = false;
  for (const char* k : {"workload.read", "workload.update", "workload.insert", "workload.scan",
                        "workload.rmw"}) {
    custom_mix |= kv.Has(k);
  }
  if (custom_mix) {
    mix = OpMix{};
    TIERKV_RETURN_IF_ERROR(kv.MaybeDouble("workload.read", &mix.read));
    TIERKV_RETURN_IF_ERROR(kv.MaybeDouble("workload.update", &mix.update));
    TIERKV_RETURN_IF_ERROR(kv.MaybeDouble("workload.insert", &mix.insert));
    TIERKV_RETURN_IF_ERROR(kv.MaybeDouble("workload.scan", &mix.scan));
    TIERKV_RETURN_IF_ERROR(kv.MaybeDouble("workload.rmw", &mix.read_modify_write));
    name = "custom";
  }
  return Validate();
}

// Zipfian.

namespace {

// log1p(x)/x and expm1(x)/x, continuous at 0.
double Helper1(double x) { return std::abs(x) > 1e-8 ? std::log1p(x) / x : 1 - x / 2; }
double Helper2(double x) { return std::abs(x) > 1e-8 ? std::expm1(x) / x : 1 + x / 2; }

}  // namespace

ZipfianGenerator::ZipfianGenerator(uint64_t n, double theta) : n_(std::max<uint64_t>(n, 1)), theta_(theta) {
  h_x1_ = H(1.5) - 1.0;
  h_n_ = H(double(n_) + 0.5);
  s_ = 2.0 - HInverse(H(2.5) - std::exp(-theta_ * std::log(2.0)));
}

double ZipfianGenerator::H(double x) const {
  double lx = std::log(x);
  return Helper2((1.0 - theta_) * lx) * lx;
}

double ZipfianGenerator::HInverse(double x) const {
  double t = std::max(x * (1.0 - theta_), -1.0);
  return std::exp(Helper1(t) * x);
}

// Keys and values.

std::string RecordKey(uint64_t index) {
  // FNV-1a over the index bytes.
  uint64_t h = 0xcbf29ce484222325ull;
  for (int i = 0; i < 8; ++i) {
    h ^= (index >> (8 * i)) & 0xff;
    h *= 0x100000001b3ull;
  }
  char buf[40];
  std::snprintf(buf, sizeof(buf), "user%016llx%llu", static_cast<unsigned long long>(h),
                static_cast<unsigned long long>(index % 10));
  return buf;
}

std::string RecordValue(uint64_t index, uint64_t version, size_t bytes) {
  std::string v = std::to_string(index) + "." + std::to_string(version) + ":";
  if (v.size() >= bytes) {
    v.resize(bytes);
    return v;
  }
  size_t head = v.size();
  v.resize(bytes);
  uint64_t x = (index + 1) * 0x9e3779b97f4a7c15ull ^ version;
  for (size_t i = head; i < bytes; ++i) {
    x ^= x << 13;
    x ^= x >> 7;
    x ^= x << 17;
    v[i] = static_cast<char>('a' + x % 26);
  }
  return v;
}

void KeySpace::AckInsert(uint64_t index) {
  uint64_t cur = acked_.load(std::memory_order_relaxed);
  while (cur < index + 1 &&
         !acked_.compare_exchange_weak(cur, index + 1, std::memory_order_release)) {
  }
}

// Operation streams.

OpGenerator::OpGenerator(const WorkloadSpec& spec, KeySpace* keys, uint64_t stream)
    : spec_(spec),
      keys_(keys),
      rng_(spec.seed * 0x9e3779b97f4a7c15ull + stream),
      zipf_(spec.distribution == KeyDistribution::kLatest
                ? spec.record_count + spec.operation_count
                : spec.record_count,
            spec.distribution == KeyDistribution::kUniform ? 0.5 : spec.theta) {
  const OpMix& m = spec.mix;
  const double parts[] = {m.read, m.update, m.insert, m.scan, m.read_modify_write};
  double acc = 0;
  for (int i = 0; i < 5; ++i) {
    acc += parts[i];
    cumulative_[i] = acc;
  }
}

uint64_t OpGenerator::ChooseExisting() {
  uint64_t n = std::max<uint64_t>(keys_->acked(), 1);
  switch (spec_.distribution) {
    case KeyDistribution::kUniform:
      return std::uniform_int_distribution<uint64_t>(0, n - 1)(rng_);
    case KeyDistribution::kZipfian: {
      uint64_t r = zipf_.Next(rng_);
      return r < n ? r : r % n;
    }
    case KeyDistribution::kLatest:
      while (true) {
        uint64_t r = zipf_.Next(rng_);
        if (r < n) return n - 1 - r;
      }
  }
  return 0;
}

Operation OpGenerator::Next() {
  double u = std::uniform_real_distribution<double>(0.0, cumulative_[4])(rng_);
  int pick = 0;
  while (pick < 4 && u >= cumulative_[pick]) ++pick;
  Operation op;
  op.type = static_cast<OpType>(pick);
  if (op.type == OpType::kInsert) {
    op.key = keys_->ReserveInsert();
  } else {
    op.key = ChooseExisting();
  }
  if (op.type == OpType::kScan) {
    op.scan_length = std::uniform_int_distribution<int>(1, spec_.max_scan_length)(rng_);
  }
  return op;
}

}  // namespace tierkv
