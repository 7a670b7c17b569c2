#include "fopt/dataset.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fopt::data {

namespace {

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void i16(std::int16_t v) { le(static_cast<std::uint16_t>(v), 2); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(std::string_view s) { buf_.append(s); }
  const std::string& str() const { return buf_; }

 private:
  void le(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
  std::uint16_t u16() { return static_cast<std::uint16_t>(le(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(le(4)); }
  std::uint64_t u64() { return le(8); }
  std::int16_t i16() { return static_cast<std::int16_t>(u16()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string bytes(std::size_t n) { return std::string(take(n), n); }
  bool at_end() const { return pos_ == data_.size(); }

 private:
  const char* take(std::size_t n) {
    if (pos_ + n > data_.size()) throw FormatError("dataset file truncated");
    const char* p = data_.data() + pos_;
    pos_ += n;
    return p;
  }
  std::uint64_t le(int n) {
    const char* p = take(n);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
    return v;
  }
  std::string data_;
  std::size_t pos_ = 0;
};

void write_state(Writer& w, const grid::JointState& s) {
  w.u32(s.apples);
  w.u32(static_cast<std::uint32_t>(s.step));
  for (const grid::Cell& c : s.cells) {
    w.i16(static_cast<std::int16_t>(c.x));
    w.i16(static_cast<std::int16_t>(c.y));
  }
}

grid::JointState read_state(Reader& r, int n) {
  grid::JointState s;
  s.apples = r.u32();
  s.step = static_cast<int>(r.u32());
  s.cells.resize(n);
  for (auto& c : s.cells) {
    c.x = r.i16();
    c.y = r.i16();
  }
  return s;
}

std::string serialize(const TransitionDataset& ds) {
  Writer w;
  w.bytes("FOPT");
  w.u16(kDatasetVersion);
  nlohmann::json header;
  header["spec"] = grid::to_json(ds.spec);
  header["seed"] = ds.seed;
  header["policy"] = ds.policy_tag;
  header["config_hash"] = ds.config_hash;
  header["count"] = ds.transitions.size();
  const std::string hj = header.dump();
  w.u32(static_cast<std::uint32_t>(hj.size()));
  w.bytes(hj);
  w.u64(ds.transitions.size());
  for (const Transition& t : ds.transitions) {
    w.u32(t.episode);
    write_state(w, t.state);
    for (grid::Action a : t.actions) w.u8(static_cast<std::uint8_t>(a));
    write_state(w, t.next);
    w.f64(t.reward);
    w.u8(t.done ? 1 : 0);
  }
  return w.str();
}

}  // namespace

std::vector<std::pair<std::size_t, std::size_t>> TransitionDataset::episodes() const {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  std::size_t begin = 0;
  for (std::size_t i = 1; i <= transitions.size(); ++i) {
    if (i == transitions.size() || transitions[i].episode != transitions[begin].episode) {
      out.emplace_back(begin, i);
      begin = i;
    }
  }
  return out;
}

std::vector<grid::Action> RandomJointPolicy::sample(const grid::GridSpec& spec, Rng& rng) const {
  std::vector<grid::Action> out(spec.n_agents);
  for (int i = 0; i < spec.n_agents; ++i) {
    const auto legal = grid::legal_actions(spec.type_of(i));
    out[i] = legal[uniform_index(rng, legal.size())];
  }
  return out;
}

TransitionDataset collect_dataset(const grid::GridSpec& spec, const RandomJointPolicy& policy,
                                  std::size_t n_transitions, std::uint64_t seed) {
  if (n_transitions < 1) throw ConfigError("n_transitions must be at least 1");
  spec.validate();
  TransitionDataset ds;
  ds.spec = spec;
  ds.seed = seed;
  ds.transitions.reserve(n_transitions);
  Rng rng = make_rng(seed, "collect/actions");
  std::uint32_t episode = 0;
  grid::JointState s = grid::reset(spec, derive_seed(seed, "collect/reset/" + std::to_string(episode)));
  while (ds.transitions.size() < n_transitions) {
    Transition t;
    t.episode = episode;
    t.state = s;
    t.actions = policy.sample(spec, rng);
    grid::StepResult r = grid::step(spec, s, t.actions, false);
    t.next = r.state;
    t.reward = r.reward;
    t.done = r.done;
    ds.transitions.push_back(std::move(t));
    if (r.done) {
      ++episode;
      s = grid::reset(spec, derive_seed(seed, "collect/reset/" + std::to_string(episode)));
    } else {
      s = r.state;
    }
  }
  return ds;
}

std::size_t record_size(int n_agents) {
  const std::size_t state = 4 + 4 + 4 * static_cast<std::size_t>(n_agents);
  return 4 + state + static_cast<std::size_t>(n_agents) + state + 8 + 1;
}

void save_dataset(const TransitionDataset& ds, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot write " + path.string());
  const std::string bytes = serialize(ds);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

TransitionDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  Reader r(ss.str());
  if (r.bytes(4) != "FOPT") throw FormatError("bad magic in " + path.string());
  const auto version = r.u16();
  if (version != kDatasetVersion) throw FormatError("unsupported dataset version " + std::to_string(version));
  const auto hlen = r.u32();
  const nlohmann::json header = nlohmann::json::parse(r.bytes(hlen));
  TransitionDataset ds;
  ds.spec = grid::spec_from_json(header.at("spec"));
  ds.seed = header.at("seed");
  ds.policy_tag = header.at("policy");
  ds.config_hash = header.at("config_hash");
  const auto count = r.u64();
  if (count != header.at("count").get<std::uint64_t>()) throw FormatError("count mismatch in header");
  const int n = ds.spec.n_agents;
  ds.transitions.resize(count);
  for (auto& t : ds.transitions) {
    t.episode = r.u32();
    t.state = read_state(r, n);
    t.actions.resize(n);
    for (auto& a : t.actions) a = grid::action_from_int(r.u8());
    t.next = read_state(r, n);
    t.reward = r.f64();
    t.done = r.u8() != 0;
  }
  if (!r.at_end()) throw FormatError("trailing bytes in " + path.string());
  return ds;
}

std::uint64_t dataset_hash(const TransitionDataset& ds) { return fnv1a64(serialize(ds)); }

}  // namespace fopt::data
