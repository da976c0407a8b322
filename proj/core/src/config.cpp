#include "gameprior/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

namespace gameprior {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

struct Cursor {
  const std::string& source;
  std::size_t line;
  std::string key;

  [[noreturn]] void fail(const std::string& what) const {
    throw ConfigError(source + ":" + std::to_string(line) + ": " + key + ": " + what);
  }
};

double to_double(const std::string& v, const Cursor& c) {
  // Accept "a/b" so fractions such as 1/6 can be written exactly.
  if (auto slash = v.find('/'); slash != std::string::npos) {
    return to_double(trim(v.substr(0, slash)), c) / to_double(trim(v.substr(slash + 1)), c);
  }
  std::size_t used = 0;
  double d = 0.0;
  try {
    d = std::stod(v, &used);
  } catch (const std::exception&) {
    c.fail("expected a number, got '" + v + "'");
  }
  if (used != v.size()) c.fail("expected a number, got '" + v + "'");
  return d;
}

std::uint64_t to_unsigned(const std::string& v, const Cursor& c) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) c.fail("expected a non-negative integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& v, const Cursor& c) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  c.fail("expected true or false, got '" + v + "'");
}

template <class F>
auto parse_enum(F parse, const std::string& v, const Cursor& c) {
  try {
    return parse(v);
  } catch (const std::invalid_argument& e) {
    c.fail(e.what());
  }
}

using Setter = std::function<void(const std::string&, const Cursor&)>;

std::map<std::string, Setter, std::less<>> model_keys(ModelConfig& m) {
  return {
      {"data", [&m](auto& v, auto& c) { m.data = parse_enum(parse_data_kind, v, c); }},
      {"patch_side", [&m](auto& v, auto& c) { m.patch_side = to_unsigned(v, c); }},
      {"atoms", [&m](auto& v, auto& c) { m.atoms = to_unsigned(v, c); }},
      {"untied", [&m](auto& v, auto& c) { m.untied = to_bool(v, c); }},
  };
}

std::map<std::string, Setter, std::less<>> solver_keys(SolverConfig& s) {
  return {
      {"iterations", [&s](auto& v, auto& c) { s.iterations = to_unsigned(v, c); }},
      {"method", [&s](auto& v, auto& c) { s.method = parse_enum(parse_method, v, c); }},
      {"step_rule", [&s](auto& v, auto& c) { s.step_rule = parse_enum(parse_step_rule, v, c); }},
      {"eta0", [&s](auto& v, auto& c) { s.eta0 = to_double(v, c); }},
      {"refresh_fraction", [&s](auto& v, auto& c) { s.refresh_fraction = to_double(v, c); }},
      {"max_refreshes", [&s](auto& v, auto& c) { s.max_refreshes = to_unsigned(v, c); }},
      {"l1_mode", [&s](auto& v, auto& c) { s.l1_mode = parse_enum(parse_l1_mode, v, c); }},
      {"divergence_bound", [&s](auto& v, auto& c) { s.divergence_bound = to_double(v, c); }},
  };
}

std::map<std::string, Setter, std::less<>> train_keys(TrainConfig& t) {
  return {
      {"epochs", [&t](auto& v, auto& c) { t.epochs = to_unsigned(v, c); }},
      {"batch_size", [&t](auto& v, auto& c) { t.batch_size = to_unsigned(v, c); }},
      {"lr0", [&t](auto& v, auto& c) { t.lr0 = to_double(v, c); }},
      {"lr_decay", [&t](auto& v, auto& c) { t.lr_decay = to_double(v, c); }},
      {"lr_decay_every", [&t](auto& v, auto& c) { t.lr_decay_every = to_unsigned(v, c); }},
      {"backtrack_factor", [&t](auto& v, auto& c) { t.backtrack_factor = to_double(v, c); }},
      {"backtrack_check_every", [&t](auto& v, auto& c) { t.backtrack_check_every = to_unsigned(v, c); }},
      {"backtrack_tolerance", [&t](auto& v, auto& c) { t.backtrack_tolerance = to_double(v, c); }},
      {"rot90", [&t](auto& v, auto& c) { t.rot90 = to_bool(v, c); }},
      {"hflip", [&t](auto& v, auto& c) { t.hflip = to_bool(v, c); }},
      {"crop_size", [&t](auto& v, auto& c) { t.crop_size = to_unsigned(v, c); }},
      {"noise_sigma", [&t](auto& v, auto& c) { t.noise_sigma = to_double(v, c); }},
      {"max_steps", [&t](auto& v, auto& c) { t.max_steps = to_unsigned(v, c); }},
      {"seed", [&t](auto& v, auto& c) { t.seed = to_unsigned(v, c); }},
  };
}

std::map<std::string, Setter, std::less<>> prior_keys(PriorSpec& p) {
  return {
      {"kind", [&p](auto& v, auto& c) { p.kind = parse_enum(parse_prior_kind, v, c); }},
      {"radius", [&p](auto& v, auto& c) { p.radius = to_unsigned(v, c); }},
      {"symmetric", [&p](auto& v, auto& c) { p.symmetric = to_bool(v, c); }},
      {"window", [&p](auto& v, auto& c) { p.window = to_unsigned(v, c); }},
      {"max_neighbors", [&p](auto& v, auto& c) { p.max_neighbors = to_unsigned(v, c); }},
      {"similarity_patch", [&p](auto& v, auto& c) { p.similarity_patch = to_unsigned(v, c); }},
  };
}

std::string number(double v) {
  std::ostringstream s;
  s << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
  return s.str();
}

const char* boolean(bool b) { return b ? "true" : "false"; }

}  // namespace

void RunConfig::validate() const {
  solver.validate();
  train.validate();
  if (model.data == DataKind::patch_dict && (model.patch_side == 0 || model.atoms == 0)) {
    throw ConfigError("model: patch_side and atoms must be positive");
  }
  for (const auto& p : priors) {
    if (p.kind == PriorKind::variance_reduction && model.data != DataKind::patch_dict) {
      throw ConfigError("prior variance_reduction needs data = patch_dict");
    }
    if ((uses_nonlocal_weights(p.kind) || uses_bilateral_weights(p.kind)) && p.window % 2 == 0) {
      throw ConfigError("prior " + std::string(to_string(p.kind)) + ": window must be odd");
    }
  }
}

RunConfig parse_config(std::istream& in, const std::string& source) {
  RunConfig cfg;
  std::map<std::string, Setter, std::less<>> keys;
  std::string section;
  std::string raw;
  Cursor cur{source, 0, {}};
  while (std::getline(in, raw)) {
    ++cur.line;
    cur.key.clear();
    std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') cur.fail("unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section == "model") {
        keys = model_keys(cfg.model);
      } else if (section == "solver") {
        keys = solver_keys(cfg.solver);
      } else if (section == "train") {
        keys = train_keys(cfg.train);
      } else if (section == "prior") {
        cfg.priors.emplace_back();
        keys.clear();
      } else {
        cur.key = "[" + section + "]";
        cur.fail("unknown section");
      }
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) cur.fail("expected 'key = value', got '" + line + "'");
    cur.key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (section.empty()) cur.fail("key outside of a section");
    // prior sections bind to the most recent entry; vector growth moves it
    if (section == "prior") keys = prior_keys(cfg.priors.back());
    auto it = keys.find(cur.key);
    if (it == keys.end()) cur.fail("unknown key in [" + section + "]");
    if (value.empty()) cur.fail("missing value");
    it->second(value, cur);
  }
  try {
    cfg.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(source + ": " + e.what());
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path.string() + ": cannot open");
  return parse_config(in, path.string());
}

void write_config(std::ostream& out, const RunConfig& c) {
  out << "[model]\n"
      << "data = " << to_string(c.model.data) << "\n"
      << "patch_side = " << c.model.patch_side << "\n"
      << "atoms = " << c.model.atoms << "\n"
      << "untied = " << boolean(c.model.untied) << "\n\n";
  out << "[solver]\n"
      << "iterations = " << c.solver.iterations << "\n"
      << "method = " << to_string(c.solver.method) << "\n"
      << "step_rule = " << to_string(c.solver.step_rule) << "\n"
      << "eta0 = " << number(c.solver.eta0) << "\n"
      << "refresh_fraction = " << number(c.solver.refresh_fraction) << "\n"
      << "max_refreshes = " << c.solver.max_refreshes << "\n"
      << "l1_mode = " << to_string(c.solver.l1_mode) << "\n"
      << "divergence_bound = " << number(c.solver.divergence_bound) << "\n\n";
  const TrainConfig& t = c.train;
  out << "[train]\n"
      << "epochs = " << t.epochs << "\n"
      << "batch_size = " << t.batch_size << "\n"
      << "lr0 = " << number(t.lr0) << "\n"
      << "lr_decay = " << number(t.lr_decay) << "\n"
      << "lr_decay_every = " << t.lr_decay_every << "\n"
      << "backtrack_factor = " << number(t.backtrack_factor) << "\n"
      << "backtrack_check_every = " << t.backtrack_check_every << "\n"
      << "backtrack_tolerance = " << number(t.backtrack_tolerance) << "\n"
      << "rot90 = " << boolean(t.rot90) << "\n"
      << "hflip = " << boolean(t.hflip) << "\n"
      << "crop_size = " << t.crop_size << "\n"
      << "noise_sigma = " << number(t.noise_sigma) << "\n"
      << "max_steps = " << t.max_steps << "\n"
      << "seed = " << t.seed << "\n";
  for (const auto& p : c.priors) {
    out << "\n[prior]\n"
        << "kind = " << to_string(p.kind) << "\n"
        << "radius = " << p.radius << "\n"
        << "symmetric = " << boolean(p.symmetric) << "\n"
        << "window = " << p.window << "\n"
        << "max_neighbors = " << p.max_neighbors << "\n"
        << "similarity_patch = " << p.similarity_patch << "\n";
  }
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"tv", "nltv", "sc", "nlgroup", "pixel-laplacian"};
  return names;
}

RunConfig preset(std::string_view name) {
  RunConfig c;
  c.model.patch_side = 9;
  c.model.atoms = 256;
  c.solver.iterations = 24;
  c.solver.refresh_fraction = 1.0 / 6.0;
  c.train.epochs = 300;
  c.train.batch_size = 32;

  auto pixel = [&c](PriorKind kind) {
    c.model.data = DataKind::pixel;
    c.solver.eta0 = 0.5;
    c.solver.refresh_fraction = 1.0 / 12.0;
    c.train.crop_size = 0;
    PriorSpec p;
    p.kind = kind;
    c.priors.push_back(p);
  };

  if (name == "tv") {
    pixel(PriorKind::tv);
  } else if (name == "nltv") {
    pixel(PriorKind::nltv);
  } else if (name == "pixel-laplacian") {
    pixel(PriorKind::laplacian);
  } else if (name == "sc") {
    c.model.untied = true;
    c.solver.method = Method::gradient;
    c.solver.l1_mode = L1Mode::proximal_step;
    c.priors.push_back(PriorSpec{PriorKind::weighted_l1});
  } else if (name == "nlgroup") {
    c.model.untied = true;
    c.priors.push_back(PriorSpec{PriorKind::nl_group});
  } else {
    throw ConfigError("unknown preset '" + std::string(name) + "'");
  }
  c.validate();
  return c;
}

}  // namespace gameprior
