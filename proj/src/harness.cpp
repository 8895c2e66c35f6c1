#include "niff/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <toml.hpp>

#include "niff/csv.hpp"
#include "niff/error.hpp"

namespace niff {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// TOML reading

namespace {

class Reader {
 public:
  Reader(const toml::table* table, std::string prefix) : t_(table), prefix_(std::move(prefix)) {}

  void read(std::string_view key, double& out) {
    const toml::node* n = take(key);
    if (!n) return;
    if (auto v = n->value<double>()) {
      out = *v;
    } else {
      throw ConfigError(where(key) + ": expected a number");
    }
  }
  void read(std::string_view key, std::size_t& out) {
    const toml::node* n = take(key);
    if (!n) return;
    const auto* v = n->as_integer();
    if (!v || v->get() < 0) throw ConfigError(where(key) + ": expected a non-negative integer");
    out = static_cast<std::size_t>(v->get());
  }
  void read(std::string_view key, bool& out) {
    const toml::node* n = take(key);
    if (!n) return;
    const auto* v = n->as_boolean();
    if (!v) throw ConfigError(where(key) + ": expected true or false");
    out = v->get();
  }
  void read(std::string_view key, std::string& out) {
    const toml::node* n = take(key);
    if (!n) return;
    const auto* v = n->as_string();
    if (!v) throw ConfigError(where(key) + ": expected a string");
    out = v->get();
  }
  template <class T>
  void read(std::string_view key, std::vector<T>& out) {
    const toml::node* n = take(key);
    if (!n) return;
    const auto* arr = n->as_array();
    if (!arr) throw ConfigError(where(key) + ": expected an array");
    std::vector<T> values;
    for (std::size_t i = 0; i < arr->size(); ++i) {
      const toml::node& e = *arr->get(i);
      const std::string at = where(key) + "[" + std::to_string(i) + "]";
      if constexpr (std::is_same_v<T, double>) {
        const auto v = e.value<double>();
        if (!v) throw ConfigError(at + ": expected a number");
        values.push_back(*v);
      } else {
        const auto* v = e.as_integer();
        if (!v || v->get() < 0) throw ConfigError(at + ": expected a non-negative integer");
        values.push_back(static_cast<T>(v->get()));
      }
    }
    out = std::move(values);
  }
  template <class T>
  void read(std::string_view key, std::optional<T>& out) {
    if (!has(key)) return;
    T v = out.value_or(T{});
    read(key, v);
    out = v;
  }
  void read(std::string_view key, StepDecay& out) {
    Reader r = sub(key);
    r.read("initial", out.initial);
    r.read("factor", out.factor);
    r.read("interval", out.interval);
    r.read("floor", out.floor);
    r.finish();
  }
  void read(std::string_view key, std::optional<StepDecay>& out) {
    if (!has(key)) return;
    StepDecay v = out.value_or(StepDecay{});
    read(key, v);
    out = v;
  }
  void read(std::string_view key, AlphaRamp& out) {
    Reader r = sub(key);
    r.read("start", out.start);
    r.read("ramp", out.ramp);
    r.finish();
  }

  bool has(std::string_view key) const { return t_ && t_->contains(key); }

  /// Empty reader when the key is absent.
  Reader sub(std::string_view key) {
    const toml::node* n = take(key);
    if (!n) return Reader(nullptr, where(key));
    const auto* t = n->as_table();
    if (!t) throw ConfigError(where(key) + ": expected a table");
    return Reader(t, where(key));
  }

  void finish() const {
    if (!t_) return;
    for (auto&& [k, v] : *t_) {
      if (!used_.count(std::string(k.str()))) throw ConfigError("unknown key '" + where(k.str()) + "'");
    }
  }

 private:
  const toml::node* take(std::string_view key) {
    if (!t_) return nullptr;
    const toml::node* n = t_->get(key);
    if (n) used_.insert(std::string(key));
    return n;
  }
  std::string where(std::string_view key) const {
    return prefix_.empty() ? std::string(key) : prefix_ + "." + std::string(key);
  }

  const toml::table* t_;
  std::string prefix_;
  std::set<std::string> used_;
};

void merge_into(toml::table& base, const toml::table& over) {
  for (auto&& [k, v] : over) {
    if (const auto* ot = v.as_table()) {
      if (auto* bt = base.get_as<toml::table>(k)) {
        merge_into(*bt, *ot);
        continue;
      }
    }
    v.visit([&](const auto& node) { base.insert_or_assign(k, node); });
  }
}

void absolutize(toml::table& root, const char* section, const char* key, const fs::path& dir) {
  auto* t = root.get_as<toml::table>(section);
  if (!t) return;
  auto* s = t->get_as<std::string>(key);
  if (!s || s->get().empty()) return;
  const fs::path p(s->get());
  if (p.is_relative()) *s = (dir / p).lexically_normal().string();
}

toml::table load_table(const std::string& text, const fs::path& dir, const std::string& source,
                       std::vector<fs::path>& stack) {
  toml::table t;
  try {
    t = toml::parse(text, source);
  } catch (const toml::parse_error& e) {
    std::ostringstream msg;
    msg << source << ":" << e.source().begin.line << ":" << e.source().begin.column << ": " << e.description();
    throw ConfigError(msg.str());
  }
  absolutize(t, "data", "file", dir);
  absolutize(t, "model", "excitation", dir);
  absolutize(t, "model", "excitation_2", dir);

  if (const auto* ext = t.get("extends")) {
    const auto* et = ext->as_table();
    if (!et) throw ConfigError(source + ": 'extends' must be a table");
    std::string base;
    for (auto&& [k, v] : *et) {
      if (k.str() != "base") throw ConfigError("unknown key 'extends." + std::string(k.str()) + "'");
      const auto* s = v.as_string();
      if (!s) throw ConfigError("extends.base: expected a string");
      base = s->get();
    }
    if (base.empty()) throw ConfigError(source + ": extends.base is missing");
    const fs::path base_path = fs::weakly_canonical(dir / base);
    if (std::find(stack.begin(), stack.end(), base_path) != stack.end())
      throw ConfigError(source + ": extends cycle through " + base_path.string());
    std::ifstream in(base_path);
    if (!in) throw ConfigError(source + ": cannot open base config " + base_path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    stack.push_back(base_path);
    toml::table merged = load_table(ss.str(), base_path.parent_path(), base_path.string(), stack);
    stack.pop_back();
    t.erase("extends");
    merge_into(merged, t);
    return merged;
  }
  return t;
}

ExperimentConfig from_table(const toml::table& root) {
  ExperimentConfig c;
  Reader r(&root, "");
  r.read("name", c.name);
  r.read("algorithm", c.algorithm);
  r.read("window", c.window);
  r.read("seed", c.seed);
  r.read("threads", c.threads);
  r.read("theta_init", c.theta_init);
  r.read("beta1", c.beta1);
  r.read("beta2", c.beta2);
  r.read("time_mode", c.time_mode);

  {
    auto m = r.sub("model");
    m.read("kind", c.model.kind);
    m.read("forcing_amplitude", c.model.forcing_amplitude);
    m.read("forcing_frequency", c.model.forcing_frequency);
    m.read("stories", c.model.stories);
    m.read("excitation", c.model.excitation);
    m.read("excitation_2", c.model.excitation_2);
    {
      auto b = m.sub("bouc_wen");
      b.read("beta", c.model.bouc_wen.beta);
      b.read("gamma", c.model.bouc_wen.gamma);
      b.read("exponent", c.model.bouc_wen.exponent);
      b.read("mass", c.model.bouc_wen.mass);
      b.read("damping", c.model.bouc_wen.damping);
      b.finish();
    }
    m.read("state_scale", c.model.state_scale);
    m.read("theta_scale", c.model.theta_scale);
    m.read("y_scale", c.model.y_scale);
    m.finish();
  }
  {
    auto d = r.sub("data");
    d.read("file", c.data.file);
    d.read("sigma_y", c.data.sigma_y);
    d.read("theta_true", c.data.theta_true);
    d.read("x_init", c.data.x_init);
    d.read("dt", c.data.dt);
    d.read("stride", c.data.stride);
    d.read("noise", c.data.noise);
    d.read("noise_rule", c.data.noise_rule);
    d.read("seed", c.data.seed);
    d.finish();
  }
  {
    auto p = r.sub("path");
    p.read("kind", c.path.kind);
    p.read("basis", c.path.basis);
    p.read("modes", c.path.modes);
    p.read("period", c.path.period);
    p.read("rbf_count", c.path.rbf_count);
    p.read("rbf_scale", c.path.rbf_scale);
    p.read("encoder_modes", c.path.encoder_modes);
    p.read("hidden_widths", c.path.hidden_widths);
    p.read("dependent_index", c.path.dependent_index);
    p.finish();
  }
  {
    auto n = r.sub("nsvi");
    n.read("niter", c.nsvi.niter);
    n.read("niter_auxi", c.nsvi.niter_auxi);
    n.read("n_sample", c.nsvi.sizes.n_sample);
    n.read("n_t", c.nsvi.sizes.n_t);
    n.read("n_eps_aux", c.nsvi.sizes.n_eps_aux);
    n.read("n_t_aux", c.nsvi.sizes.n_t_aux);
    n.read("m_y", c.nsvi.sizes.m_y);
    n.read("lr", c.nsvi.lr);
    n.read("lr_aux", c.nsvi.lr_aux);
    n.read("partition_ramp", c.nsvi.partition_ramp);
    n.read("w_family", c.nsvi.w_family);
    n.read("theta_family", c.nsvi.theta_family);
    n.read("x0_family", c.nsvi.x0_family);
    n.read("init_scale", c.nsvi.init_scale);
    n.read("log_every", c.nsvi.log_every);
    n.finish();
  }
  {
    auto n = r.sub("npsgld");
    n.read("niter", c.npsgld.niter);
    n.read("niter_auxi", c.npsgld.niter_auxi);
    n.read("n_t", c.npsgld.n_t);
    n.read("n_t_aux", c.npsgld.n_t_aux);
    n.read("n_w_aux", c.npsgld.n_w_aux);
    n.read("m_y", c.npsgld.m_y);
    for (auto [key, lo] : {std::pair{"main", &c.npsgld.main}, std::pair{"aux", &c.npsgld.aux}}) {
      auto s = n.sub(key);
      s.read("rho", lo->rho);
      s.read("alpha", lo->alpha);
      s.read("delta", lo->delta);
      s.read("precondition", lo->precondition);
      s.finish();
    }
    n.read("partition_ramp", c.npsgld.partition_ramp);
    n.read("n_chains", c.npsgld.n_chains);
    n.read("burn_in", c.npsgld.burn_in);
    n.read("thin", c.npsgld.thin);
    n.read("trace_every", c.npsgld.trace_every);
    n.finish();
  }
  {
    auto f = r.sub("filter");
    f.read("method", c.filter.method);
    f.read("theta", c.filter.theta);
    f.finish();
  }
  {
    auto s = r.sub("summary");
    s.read("grid_points", c.summary.grid_points);
    s.read("guide_samples", c.summary.guide_samples);
    s.finish();
  }
  {
    auto p = r.sub("predict");
    p.read("horizon", c.predict.horizon);
    p.read("dt", c.predict.dt);
    p.read("x_init", c.predict.x_init);
    p.read("max_samples", c.predict.max_samples);
    p.finish();
  }
  r.finish();
  c.validate();
  return c;
}

void require(bool ok, const std::string& key, const std::string& what) {
  if (!ok) throw ConfigError(key + ": " + what);
}

bool one_of(const std::string& v, std::initializer_list<const char*> options) {
  return std::any_of(options.begin(), options.end(), [&](const char* o) { return v == o; });
}

}  // namespace

void ExperimentConfig::validate() const {
  require(one_of(algorithm, {"nsvi", "npsgld", "nsgld", "filter"}), "algorithm",
          "must be one of nsvi, npsgld, nsgld, filter");
  require(window > 0.0, "window", "must be > 0");
  require(threads >= 1, "threads", "must be >= 1");
  require(seed <= static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max()), "seed", "too large");
  require(beta1 >= 0.0, "beta1", "must be >= 0");
  require(beta2 >= 0.0, "beta2", "must be >= 0");
  require(one_of(time_mode, {"uniform", "grid"}), "time_mode", "must be uniform or grid");

  require(one_of(model.kind, {"duffing", "two_dof", "bouc_wen", "nes"}), "model.kind",
          "must be one of duffing, two_dof, bouc_wen, nes");
  if (model.kind == "two_dof") {
    require(model.forcing_amplitude.has_value(), "model.forcing_amplitude", "required for two_dof");
    require(model.forcing_frequency.has_value(), "model.forcing_frequency", "required for two_dof");
  }
  if (model.kind == "bouc_wen") {
    require(!model.excitation.empty(), "model.excitation", "required for bouc_wen");
    require(model.stories >= 1, "model.stories", "must be >= 1");
  }
  if (model.kind == "nes") {
    require(!model.excitation.empty(), "model.excitation", "required for nes");
    require(!model.excitation_2.empty(), "model.excitation_2", "required for nes");
  }

  if (data.file.empty()) {
    require(!data.theta_true.empty(), "data.theta_true", "required when data are simulated");
    require(!data.x_init.empty(), "data.x_init", "required when data are simulated");
    require(data.dt > 0.0, "data.dt", "must be > 0");
    require(data.stride >= 1, "data.stride", "must be >= 1");
    require(data.noise >= 0.0, "data.noise", "must be >= 0");
    require(one_of(data.noise_rule, {"scale", "rms"}), "data.noise_rule", "must be scale or rms");
  } else {
    require(!data.sigma_y.empty(), "data.sigma_y", "required with data.file");
  }

  require(one_of(path.kind, {"fourier", "rbf", "residual_net", "reparam_fourier"}), "path.kind",
          "must be one of fourier, rbf, residual_net, reparam_fourier");
  require(one_of(path.basis, {"rbf", "fourier", "none"}), "path.basis", "must be rbf, fourier or none");
  require(path.period >= 0.0, "path.period", "must be >= 0");

  for (const auto* f : {&nsvi.w_family, &nsvi.theta_family, &nsvi.x0_family})
    require(one_of(*f, {"diagonal", "full_rank"}), "nsvi", "guide families must be diagonal or full_rank");
  require(nsvi.niter >= 1, "nsvi.niter", "must be >= 1");
  require(nsvi.log_every >= 1, "nsvi.log_every", "must be >= 1");
  require(npsgld.niter >= 1, "npsgld.niter", "must be >= 1");
  require(npsgld.burn_in < npsgld.niter, "npsgld.burn_in", "must be < npsgld.niter");
  require(npsgld.thin >= 1, "npsgld.thin", "must be >= 1");
  require(npsgld.n_chains >= 1, "npsgld.n_chains", "must be >= 1");

  require(one_of(filter.method, {"nsvi", "npsgld"}), "filter.method", "must be nsvi or npsgld");
  require(summary.grid_points >= 1, "summary.grid_points", "must be >= 1");
  require(summary.guide_samples >= 1, "summary.guide_samples", "must be >= 1");
  require(predict.horizon >= 0.0, "predict.horizon", "must be >= 0");
  require(predict.dt > 0.0, "predict.dt", "must be > 0");
  require(predict.max_samples >= 1, "predict.max_samples", "must be >= 1");
}

ExperimentConfig parse_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  const fs::path abs = fs::weakly_canonical(fs::absolute(path));
  std::vector<fs::path> stack{abs};
  return from_table(load_table(ss.str(), abs.parent_path(), abs.string(), stack));
}

ExperimentConfig parse_config_string(const std::string& text, const fs::path& base_dir) {
  const fs::path dir = fs::absolute(base_dir);
  std::vector<fs::path> stack;
  return from_table(load_table(text, dir, "<string>", stack));
}

// ---------------------------------------------------------------------------
// TOML writing

namespace {

toml::array to_array(const std::vector<double>& v) {
  toml::array a;
  for (double x : v) a.push_back(x);
  return a;
}

toml::array to_array(const std::vector<std::size_t>& v) {
  toml::array a;
  for (auto x : v) a.push_back(static_cast<std::int64_t>(x));
  return a;
}

std::int64_t as_int(std::size_t v) { return static_cast<std::int64_t>(v); }

toml::table to_table(const StepDecay& s) {
  return toml::table{{"initial", s.initial}, {"factor", s.factor}, {"interval", as_int(s.interval)},
                     {"floor", s.floor}};
}

toml::table to_table(const LangevinOptions& o) {
  return toml::table{{"rho", to_table(o.rho)},
                     {"alpha", toml::table{{"start", o.alpha.start}, {"ramp", as_int(o.alpha.ramp)}}},
                     {"delta", o.delta},
                     {"precondition", o.precondition}};
}

}  // namespace

std::string serialize_config(const ExperimentConfig& c) {
  toml::table root{{"name", c.name},
                   {"algorithm", c.algorithm},
                   {"window", c.window},
                   {"seed", static_cast<std::int64_t>(c.seed)},
                   {"threads", as_int(c.threads)},
                   {"theta_init", to_array(c.theta_init)},
                   {"beta1", c.beta1},
                   {"beta2", c.beta2},
                   {"time_mode", c.time_mode}};

  toml::table model{{"kind", c.model.kind},
                    {"stories", as_int(c.model.stories)},
                    {"excitation", c.model.excitation},
                    {"excitation_2", c.model.excitation_2},
                    {"state_scale", to_array(c.model.state_scale)},
                    {"theta_scale", to_array(c.model.theta_scale)},
                    {"y_scale", to_array(c.model.y_scale)}};
  if (c.model.forcing_amplitude) model.insert("forcing_amplitude", *c.model.forcing_amplitude);
  if (c.model.forcing_frequency) model.insert("forcing_frequency", *c.model.forcing_frequency);
  const auto& bw = c.model.bouc_wen;
  model.insert("bouc_wen", toml::table{{"beta", bw.beta},
                                       {"gamma", bw.gamma},
                                       {"exponent", bw.exponent},
                                       {"mass", bw.mass},
                                       {"damping", bw.damping}});
  root.insert("model", std::move(model));

  root.insert("data", toml::table{{"file", c.data.file},
                                  {"sigma_y", to_array(c.data.sigma_y)},
                                  {"theta_true", to_array(c.data.theta_true)},
                                  {"x_init", to_array(c.data.x_init)},
                                  {"dt", c.data.dt},
                                  {"stride", as_int(c.data.stride)},
                                  {"noise", c.data.noise},
                                  {"noise_rule", c.data.noise_rule},
                                  {"seed", static_cast<std::int64_t>(c.data.seed)}});

  root.insert("path", toml::table{{"kind", c.path.kind},
                                  {"basis", c.path.basis},
                                  {"modes", as_int(c.path.modes)},
                                  {"period", c.path.period},
                                  {"rbf_count", as_int(c.path.rbf_count)},
                                  {"rbf_scale", c.path.rbf_scale},
                                  {"encoder_modes", as_int(c.path.encoder_modes)},
                                  {"hidden_widths", to_array(c.path.hidden_widths)},
                                  {"dependent_index", as_int(c.path.dependent_index)}});

  toml::table nsvi{{"niter", as_int(c.nsvi.niter)},
                   {"niter_auxi", as_int(c.nsvi.niter_auxi)},
                   {"n_sample", as_int(c.nsvi.sizes.n_sample)},
                   {"n_t", as_int(c.nsvi.sizes.n_t)},
                   {"n_eps_aux", as_int(c.nsvi.sizes.n_eps_aux)},
                   {"n_t_aux", as_int(c.nsvi.sizes.n_t_aux)},
                   {"m_y", as_int(c.nsvi.sizes.m_y)},
                   {"lr", to_table(c.nsvi.lr)},
                   {"w_family", c.nsvi.w_family},
                   {"theta_family", c.nsvi.theta_family},
                   {"x0_family", c.nsvi.x0_family},
                   {"init_scale", c.nsvi.init_scale},
                   {"log_every", as_int(c.nsvi.log_every)}};
  if (c.nsvi.lr_aux) nsvi.insert("lr_aux", to_table(*c.nsvi.lr_aux));
  if (c.nsvi.partition_ramp) nsvi.insert("partition_ramp", as_int(*c.nsvi.partition_ramp));
  root.insert("nsvi", std::move(nsvi));

  toml::table np{{"niter", as_int(c.npsgld.niter)},
                 {"niter_auxi", as_int(c.npsgld.niter_auxi)},
                 {"n_t", as_int(c.npsgld.n_t)},
                 {"n_t_aux", as_int(c.npsgld.n_t_aux)},
                 {"n_w_aux", as_int(c.npsgld.n_w_aux)},
                 {"m_y", as_int(c.npsgld.m_y)},
                 {"main", to_table(c.npsgld.main)},
                 {"aux", to_table(c.npsgld.aux)},
                 {"n_chains", as_int(c.npsgld.n_chains)},
                 {"burn_in", as_int(c.npsgld.burn_in)},
                 {"thin", as_int(c.npsgld.thin)},
                 {"trace_every", as_int(c.npsgld.trace_every)}};
  if (c.npsgld.partition_ramp) np.insert("partition_ramp", as_int(*c.npsgld.partition_ramp));
  root.insert("npsgld", std::move(np));

  root.insert("filter", toml::table{{"method", c.filter.method}, {"theta", to_array(c.filter.theta)}});
  root.insert("summary", toml::table{{"grid_points", as_int(c.summary.grid_points)},
                                     {"guide_samples", as_int(c.summary.guide_samples)}});
  root.insert("predict", toml::table{{"horizon", c.predict.horizon},
                                     {"dt", c.predict.dt},
                                     {"x_init", to_array(c.predict.x_init)},
                                     {"max_samples", as_int(c.predict.max_samples)}});

  std::ostringstream out;
  out << root << '\n';
  return out.str();
}

// ---------------------------------------------------------------------------
// Experiment assembly

std::shared_ptr<OdeModel> build_model(const ModelConfig& cfg) {
  std::shared_ptr<OdeModel> m;
  if (cfg.kind == "duffing") {
    m = duffing();
  } else if (cfg.kind == "two_dof") {
    if (!cfg.forcing_amplitude || !cfg.forcing_frequency)
      throw ConfigError("model: two_dof needs forcing_amplitude and forcing_frequency");
    m = two_dof_duffing(*cfg.forcing_amplitude, *cfg.forcing_frequency);
  } else if (cfg.kind == "bouc_wen") {
    m = bouc_wen_frame(cfg.stories, TimeSeries::read_csv(cfg.excitation), cfg.bouc_wen);
  } else if (cfg.kind == "nes") {
    m = nes(TimeSeries::read_csv(cfg.excitation), TimeSeries::read_csv(cfg.excitation_2));
  } else {
    throw ConfigError("model.kind: unknown model '" + cfg.kind + "'");
  }
  if (!cfg.state_scale.empty() || !cfg.theta_scale.empty() || !cfg.y_scale.empty()) {
    auto pick = [](const std::vector<double>& v, std::span<const double> d) {
      return v.empty() ? std::vector<double>(d.begin(), d.end()) : v;
    };
    try {
      m->set_scales(pick(cfg.state_scale, m->state_scale()), pick(cfg.theta_scale, m->theta_scale()),
                    pick(cfg.y_scale, m->y_scale()));
    } catch (const Error& e) {
      throw ConfigError(std::string("model scales: ") + e.what());
    }
  }
  return m;
}

PathSpec build_path(const ExperimentConfig& cfg, std::size_t state_dim) {
  const auto& p = cfg.path;
  PathSpec spec;
  if (p.kind == "fourier") {
    spec = fourier_path(state_dim, cfg.window, p.modes, p.period);
  } else if (p.kind == "rbf") {
    spec = rbf_path(state_dim, cfg.window, p.rbf_count, p.rbf_scale);
  } else if (p.kind == "reparam_fourier") {
    spec = reparam_fourier_path(state_dim, cfg.window, p.modes, p.dependent_index, p.period);
  } else if (p.kind == "residual_net") {
    PathSpec basis;
    if (p.basis == "rbf") {
      basis = rbf_path(state_dim, cfg.window, p.rbf_count, p.rbf_scale);
    } else {
      basis = fourier_path(state_dim, cfg.window, p.modes, p.period);
      if (p.basis == "none") basis.basis = BasisKind::None;
    }
    basis.period = p.period;
    spec = residual_path(basis, p.encoder_modes, p.hidden_widths);
  } else {
    throw ConfigError("path.kind: unknown path '" + p.kind + "'");
  }
  try {
    spec.validate();
  } catch (const Error& e) {
    throw ConfigError(std::string("path: ") + e.what());
  }
  return spec;
}

namespace {

void check_len(const std::vector<double>& v, std::size_t n, const std::string& key) {
  if (!v.empty() && v.size() != n)
    throw ConfigError(key + ": expected " + std::to_string(n) + " values, got " + std::to_string(v.size()));
}

GuideFamily family(const std::string& name) {
  return name == "full_rank" ? GuideFamily::FullRank : GuideFamily::Diagonal;
}

std::vector<double> to_normalized(std::span<const double> v, std::span<const double> scale) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / scale[i];
  return out;
}

}  // namespace

Experiment prepare(const ExperimentConfig& cfg) {
  cfg.validate();
  Experiment exp;
  exp.config = cfg;
  exp.model = build_model(cfg.model);
  const OdeModel& m = *exp.model;
  check_len(cfg.theta_init, m.param_dim(), "theta_init");
  check_len(cfg.data.theta_true, m.param_dim(), "data.theta_true");
  check_len(cfg.data.x_init, m.state_dim(), "data.x_init");
  check_len(cfg.data.sigma_y, m.output_dim(), "data.sigma_y");
  check_len(cfg.filter.theta, m.param_dim(), "filter.theta");
  check_len(cfg.predict.x_init, m.state_dim(), "predict.x_init");

  if (cfg.data.file.empty()) {
    exp.truth = rk4_integrate(m, cfg.data.x_init, cfg.data.theta_true, 0.0, cfg.window, cfg.data.dt);
    const NoiseRule rule = cfg.data.noise_rule == "rms" ? NoiseRule::FractionOfRms : NoiseRule::FractionOfScale;
    exp.data = synthesize_dataset(m, *exp.truth, cfg.data.theta_true, cfg.data.stride, cfg.data.noise,
                                  cfg.data.seed, rule);
  } else {
    Dataset all = Dataset::read_csv(cfg.data.file, cfg.data.sigma_y);
    if (all.dim != m.output_dim())
      throw ConfigError("data.file: expected " + std::to_string(m.output_dim()) + " measurement columns");
    exp.data.dim = all.dim;
    exp.data.sigma_y = all.sigma_y;
    for (std::size_t k = 0; k < all.size(); ++k) {
      if (all.times[k] < 0.0 || all.times[k] > cfg.window) continue;
      exp.data.times.push_back(all.times[k]);
      const auto row = all.row(k);
      exp.data.y.insert(exp.data.y.end(), row.begin(), row.end());
    }
    if (exp.data.size() == 0) throw ConfigError("data.file: no measurements inside [0, window]");
  }

  Problem& p = exp.problem;
  p.model = normalized(exp.model);
  p.spec = build_path(cfg, m.state_dim());
  p.prior.beta1 = cfg.beta1;
  p.prior.beta2 = cfg.beta2;
  p.prior.window = cfg.window;
  p.prior.n_t = std::max({cfg.nsvi.sizes.n_t, cfg.nsvi.sizes.n_t_aux, cfg.npsgld.n_t, cfg.npsgld.n_t_aux});
  if (cfg.time_mode == "grid") {
    p.prior.time_mode = TimeMode::DiscreteGrid;
    p.prior.grid = exp.data.times;
  }
  p.data = normalize_dataset(exp.data, m.y_scale());
  try {
    p.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("experiment: ") + e.what());
  }
  return exp;
}

NsviOptions nsvi_options(const ExperimentConfig& cfg) {
  const auto& n = cfg.nsvi;
  NsviOptions o;
  o.niter = n.niter;
  o.niter_auxi = n.niter_auxi;
  o.sizes = n.sizes;
  o.lr = n.lr;
  o.lr_aux = n.lr_aux.value_or(n.lr);
  o.partition.ramp = n.partition_ramp.value_or(2 * n.niter / 3);
  o.w_family = family(n.w_family);
  o.theta_family = family(n.theta_family);
  o.x0_family = family(n.x0_family);
  o.init_scale = n.init_scale;
  o.log_every = n.log_every;
  return o;
}

NpsgldOptions npsgld_options(const ExperimentConfig& cfg, bool precondition) {
  const auto& n = cfg.npsgld;
  NpsgldOptions o;
  o.niter = n.niter;
  o.niter_auxi = n.niter_auxi;
  o.n_t = n.n_t;
  o.n_t_aux = n.n_t_aux;
  o.n_w_aux = n.n_w_aux;
  o.m_y = n.m_y;
  o.main = n.main;
  o.aux = n.aux;
  o.main.precondition = o.main.precondition && precondition;
  o.aux.precondition = o.aux.precondition && precondition;
  o.partition.ramp = n.partition_ramp.value_or(2 * n.niter / 3);
  o.n_chains = n.n_chains;
  o.threads = cfg.threads;
  o.thin = n.thin;
  o.burn_in = n.burn_in;
  o.trace_every = n.trace_every;
  o.init_seed = cfg.seed;
  return o;
}

// ---------------------------------------------------------------------------
// Summaries

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw DomainError("quantile: no values");
  if (!(q >= 0.0 && q <= 1.0)) throw DomainError("quantile: q must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double h = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

namespace {

void push_band(Band& b, const std::vector<double>& v) {
  b.q05.push_back(quantile(v, 0.05));
  b.q50.push_back(quantile(v, 0.50));
  b.q95.push_back(quantile(v, 0.95));
}

std::span<const double> row_of(const std::vector<double>& v, std::size_t k, std::size_t n) {
  return std::span<const double>(v).subspan(k * n, n);
}

}  // namespace

PosteriorSummary summarize(const Experiment& exp, const PosteriorSamples& s) {
  const OdeModel& m = *exp.model;
  const PathSpec& spec = exp.problem.spec;
  const std::size_t n = s.size();
  if (n == 0) throw DomainError("summarize: no samples");
  if (s.w_dim != param_count(spec)) throw ShapeError("summarize: samples have the wrong path dimension");
  const std::size_t dx = m.state_dim();
  const auto xs = m.state_scale();

  PosteriorSummary out;
  out.n_samples = n;
  if (s.theta_dim > 0) {
    out.theta_names = m.param_names();
    std::vector<double> col(n);
    for (std::size_t j = 0; j < s.theta_dim; ++j) {
      double mean = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        col[k] = s.theta[k * s.theta_dim + j];
        mean += col[k];
      }
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (double v : col) var += (v - mean) * (v - mean);
      out.theta_mean.push_back(mean);
      out.theta_sd.push_back(n > 1 ? std::sqrt(var / static_cast<double>(n - 1)) : 0.0);
      push_band(out.theta, col);
    }
  }

  const std::size_t g = exp.config.summary.grid_points;
  out.grid.resize(g);
  for (std::size_t i = 0; i < g; ++i)
    out.grid[i] = g == 1 ? 0.0 : exp.config.window * static_cast<double>(i) / static_cast<double>(g - 1);

  std::vector<double> x(dx);
  std::vector<std::vector<double>> per_state(dx, std::vector<double>(n));
  auto eval_all = [&](double t) {
    for (std::size_t k = 0; k < n; ++k) {
      eval_path<double>(spec, row_of(s.w, k, s.w_dim), t, x);
      for (std::size_t i = 0; i < dx; ++i) per_state[i][k] = x[i] * xs[i];
    }
  };
  out.states.resize(dx);
  for (double t : out.grid) {
    eval_all(t);
    for (std::size_t i = 0; i < dx; ++i) push_band(out.states[i], per_state[i]);
  }

  eval_all(0.0);
  out.x0_hat_mean.assign(dx, 0.0);
  for (std::size_t i = 0; i < dx; ++i) {
    for (double v : per_state[i]) out.x0_hat_mean[i] += v / static_cast<double>(n);
  }
  if (s.x0_dim == dx && !s.x0.empty()) {
    const std::size_t nx = s.x0.size() / dx;
    out.x0_chain_mean.assign(dx, 0.0);
    for (std::size_t k = 0; k < nx; ++k) {
      for (std::size_t i = 0; i < dx; ++i) out.x0_chain_mean[i] += s.x0[k * dx + i] / static_cast<double>(nx);
    }
  }

  if (exp.truth) {
    const Trajectory& tr = *exp.truth;
    std::vector<double> se(dx, 0.0);
    for (double t : exp.data.times) {
      const auto it = std::lower_bound(tr.times.begin(), tr.times.end(), t - 1e-9);
      const auto idx = static_cast<std::size_t>(std::min<std::ptrdiff_t>(it - tr.times.begin(),
                                                                          static_cast<std::ptrdiff_t>(tr.size() - 1)));
      eval_all(t);
      for (std::size_t i = 0; i < dx; ++i) {
        const double e = quantile(per_state[i], 0.5) - tr.state(idx)[i];
        se[i] += e * e;
      }
    }
    for (std::size_t i = 0; i < dx; ++i)
      out.state_rmse.push_back(std::sqrt(se[i] / static_cast<double>(exp.data.size())));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Fits

namespace {

std::vector<double> to_physical(std::span<const double> v, std::span<const double> scale) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * scale[i];
  return out;
}

std::vector<double> theta_start(const Experiment& exp) {
  const auto& init = exp.config.theta_init;
  if (init.empty()) return std::vector<double>(exp.model->param_dim(), 0.0);
  return to_normalized(init, exp.model->theta_scale());
}

std::vector<double> filter_theta(const Experiment& exp) {
  const auto& cfg = exp.config;
  const auto& th = cfg.filter.theta.empty() ? cfg.data.theta_true : cfg.filter.theta;
  if (th.empty()) throw ConfigError("filter.theta: required when data.theta_true is not set");
  return to_normalized(th, exp.model->theta_scale());
}

void run_nsvi(const Experiment& exp, std::optional<std::vector<double>> fixed, std::uint64_t seed,
              FitResult& out) {
  const Problem& p = exp.problem;
  const OdeModel& m = *exp.model;
  NsviOptions opt = nsvi_options(exp.config);
  opt.fixed_theta = std::move(fixed);
  const bool filter = opt.fixed_theta.has_value();
  const auto w_init = init_params(p.spec, seed);
  NsviState state = nsvi_init(p, opt, w_init, theta_start(exp));
  Rng rng = Rng::stream(seed, 0);

  // Chunked so that a divergence still leaves the trace written so far.
  NsviOptions chunk = opt;
  const std::size_t total = opt.niter;
  try {
    while (state.iter < total) {
      chunk.niter = std::min(opt.log_every - state.iter % opt.log_every, total - state.iter);
      auto rows = nsvi_posterior(p, chunk, state, rng);
      out.nsvi_trace.insert(out.nsvi_trace.end(), rows.begin(), rows.end());
    }
  } catch (const DivergenceError& e) {
    out.error = e.what();
  }

  const std::size_t nth = filter ? 0 : m.param_dim();
  const std::size_t dx = m.state_dim();
  for (auto& row : out.nsvi_trace) {
    for (std::size_t j = 0; j < nth; ++j) row.means[j] *= m.theta_scale()[j];
    for (std::size_t i = 0; i < dx; ++i) row.means[nth + i] *= m.state_scale()[i];
  }
  if (!out.error.empty()) return;

  PosteriorSamples& s = out.samples;
  s.w_dim = param_count(p.spec);
  s.theta_dim = nth;
  s.x0_dim = dx;
  Rng draw = Rng::stream(seed, 1);
  std::vector<double> wf(s.w_dim);
  for (std::size_t k = 0; k < exp.config.summary.guide_samples; ++k) {
    const auto w = state.phi.sample(draw.gaussian_vector(state.phi.dim));
    const auto x0 = state.chi.sample(draw.gaussian_vector(state.chi.dim));
    expand_path<double>(p.spec, x0, w, wf);
    s.chain.push_back(0);
    s.iter.push_back(k);
    s.w.insert(s.w.end(), wf.begin(), wf.end());
    if (!filter) {
      const auto th = to_physical(state.psi.sample(draw.gaussian_vector(state.psi.dim)), m.theta_scale());
      s.theta.insert(s.theta.end(), th.begin(), th.end());
    }
    const auto x0p = to_physical(x0, m.state_scale());
    s.x0.insert(s.x0.end(), x0p.begin(), x0p.end());
  }
}

void run_npsgld(const Experiment& exp, std::optional<std::vector<double>> fixed, bool precondition,
                std::uint64_t seed, std::size_t threads, FitResult& out) {
  const OdeModel& m = *exp.model;
  NpsgldOptions opt = npsgld_options(exp.config, precondition);
  opt.threads = threads;
  opt.init_seed = seed;
  opt.fixed_theta = std::move(fixed);
  const bool filter = opt.fixed_theta.has_value();
  auto chains = npsgld_posterior(exp.problem, opt, theta_start(exp), seed);

  PosteriorSamples& s = out.samples;
  s.w_dim = param_count(exp.problem.spec);
  s.theta_dim = filter ? 0 : m.param_dim();
  s.x0_dim = m.state_dim();
  for (std::size_t c = 0; c < chains.size(); ++c) {
    const NpsgldChain& ch = chains[c];
    if (ch.failed) out.failures.emplace_back(c, ch.error);
    for (std::size_t k = 0; k < ch.iters.size(); ++k) {
      s.chain.push_back(c);
      s.iter.push_back(ch.iters[k]);
      const auto w = row_of(ch.w, k, s.w_dim);
      s.w.insert(s.w.end(), w.begin(), w.end());
      if (!filter) {
        const auto th = to_physical(row_of(ch.theta, k, s.theta_dim), m.theta_scale());
        s.theta.insert(s.theta.end(), th.begin(), th.end());
      }
      const auto x0 = to_physical(row_of(ch.x0, k, s.x0_dim), m.state_scale());
      s.x0.insert(s.x0.end(), x0.begin(), x0.end());
    }
    if (!filter) {
      for (std::size_t k = 0; k < ch.trace_iters.size(); ++k) {
        out.trace_chain.push_back(c);
        out.trace_iter.push_back(ch.trace_iters[k]);
        const auto th = to_physical(row_of(ch.trace_theta, k, m.param_dim()), m.theta_scale());
        out.trace_theta.insert(out.trace_theta.end(), th.begin(), th.end());
      }
    }
  }
  if (out.failures.size() == chains.size()) out.error = "every chain failed: " + out.failures.front().second;
}

}  // namespace

FitResult fit(const Experiment& exp, Command cmd, std::uint64_t seed, std::size_t threads) {
  FitResult out;
  const auto& cfg = exp.config;
  switch (cmd) {
    case Command::FitNsvi:
      run_nsvi(exp, std::nullopt, seed, out);
      break;
    case Command::FitNpsgld:
      run_npsgld(exp, std::nullopt, cfg.algorithm != "nsgld", seed, threads, out);
      break;
    case Command::Filter:
      if (cfg.filter.method == "nsvi") {
        run_nsvi(exp, filter_theta(exp), seed, out);
      } else {
        run_npsgld(exp, filter_theta(exp), true, seed, threads, out);
      }
      break;
    default:
      throw DomainError("fit: not a fitting command");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Files

namespace {

std::vector<std::string> w_names(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("w" + std::to_string(i));
  return out;
}

std::vector<std::string> x0_names(const OdeModel& m) {
  std::vector<std::string> out;
  for (const auto& s : m.state_names()) out.push_back("x0_" + s);
  return out;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::ordered_json band_json(const Band& b, std::size_t i) {
  return {{"q05", b.q05[i]}, {"q50", b.q50[i]}, {"q95", b.q95[i]}};
}

void write_x0_chain(const fs::path& path, const Experiment& exp, const PosteriorSamples& s) {
  if (s.x0.empty()) return;
  std::vector<std::string> header{"chain", "iter"};
  for (const auto& n : exp.model->state_names()) header.push_back(n);
  csv::Writer w(path, header);
  for (std::size_t k = 0; k < s.size(); ++k) {
    const long long ints[2] = {static_cast<long long>(s.chain[k]), static_cast<long long>(s.iter[k])};
    w.row(ints, row_of(s.x0, k, s.x0_dim));
  }
}

void read_x0_chain(const fs::path& path, PosteriorSamples& s, std::size_t dx) {
  if (!fs::exists(path)) return;
  const auto t = csv::read(path);
  if (t.header.size() != dx + 2) throw ShapeError(path.string() + ": expected chain,iter and one column per state");
  s.x0_dim = dx;
  s.x0.clear();
  for (const auto& r : t.rows) s.x0.insert(s.x0.end(), r.begin() + 2, r.end());
}

void write_failures(const fs::path& path, const std::vector<std::pair<std::size_t, std::string>>& failures,
                    const std::string& error) {
  if (failures.empty() && error.empty()) return;
  nlohmann::ordered_json j;
  j["error"] = error;
  j["failed_chains"] = nlohmann::ordered_json::array();
  for (const auto& [c, e] : failures) j["failed_chains"].push_back({{"chain", c}, {"error", e}});
  write_text(path, j.dump(2) + "\n");
}

}  // namespace

void write_samples(const fs::path& path, const Experiment& exp, const PosteriorSamples& s) {
  std::vector<std::string> header{"chain", "iter"};
  for (auto& n : w_names(s.w_dim)) header.push_back(n);
  if (s.theta_dim > 0) {
    for (const auto& n : exp.model->param_names()) header.push_back(n);
  }
  csv::Writer w(path, header);
  std::vector<double> vals(s.w_dim + s.theta_dim);
  for (std::size_t k = 0; k < s.size(); ++k) {
    const auto wr = row_of(s.w, k, s.w_dim);
    std::copy(wr.begin(), wr.end(), vals.begin());
    if (s.theta_dim > 0) {
      const auto tr = row_of(s.theta, k, s.theta_dim);
      std::copy(tr.begin(), tr.end(), vals.begin() + static_cast<std::ptrdiff_t>(s.w_dim));
    }
    const long long ints[2] = {static_cast<long long>(s.chain[k]), static_cast<long long>(s.iter[k])};
    w.row(ints, vals);
  }
}

PosteriorSamples read_samples(const fs::path& path, const Experiment& exp) {
  const auto t = csv::read(path);
  PosteriorSamples s;
  const std::size_t c_chain = t.column("chain"), c_iter = t.column("iter");
  std::vector<std::size_t> wc;
  for (std::size_t i = 0;; ++i) {
    const auto it = std::find(t.header.begin(), t.header.end(), "w" + std::to_string(i));
    if (it == t.header.end()) break;
    wc.push_back(static_cast<std::size_t>(it - t.header.begin()));
  }
  s.w_dim = wc.size();
  if (s.w_dim != 0 && s.w_dim != param_count(exp.problem.spec))
    throw ShapeError(path.string() + ": " + std::to_string(s.w_dim) + " path coefficients, configuration has " +
                     std::to_string(param_count(exp.problem.spec)));
  std::vector<std::size_t> tc;
  for (const auto& n : exp.model->param_names()) {
    const auto it = std::find(t.header.begin(), t.header.end(), n);
    if (it != t.header.end()) tc.push_back(static_cast<std::size_t>(it - t.header.begin()));
  }
  if (!tc.empty() && tc.size() != exp.model->param_dim())
    throw ShapeError(path.string() + ": some parameter columns are missing");
  s.theta_dim = tc.size();
  for (const auto& r : t.rows) {
    s.chain.push_back(static_cast<std::size_t>(r[c_chain]));
    s.iter.push_back(static_cast<std::size_t>(r[c_iter]));
    for (auto c : wc) s.w.push_back(r[c]);
    for (auto c : tc) s.theta.push_back(r[c]);
  }
  return s;
}

void write_summary_json(const fs::path& path, const Experiment& exp, const PosteriorSummary& sum) {
  using J = nlohmann::ordered_json;
  const OdeModel& m = *exp.model;
  J j;
  j["name"] = exp.config.name;
  j["n_samples"] = sum.n_samples;
  if (!sum.theta_names.empty()) {
    J th = J::object();
    for (std::size_t i = 0; i < sum.theta_names.size(); ++i) {
      J e = band_json(sum.theta, i);
      e["mean"] = sum.theta_mean[i];
      e["sd"] = sum.theta_sd[i];
      th[sum.theta_names[i]] = e;
    }
    j["theta"] = th;
  }
  j["x0_hat_mean"] = sum.x0_hat_mean;
  if (!sum.x0_chain_mean.empty()) j["x0_chain_mean"] = sum.x0_chain_mean;
  if (!sum.state_rmse.empty()) {
    J r = J::object();
    for (std::size_t i = 0; i < sum.state_rmse.size(); ++i) r[m.state_names()[i]] = sum.state_rmse[i];
    j["state_rmse"] = r;
  }
  if (!sum.failures.empty()) {
    J f = J::array();
    for (const auto& [c, e] : sum.failures) f.push_back({{"chain", c}, {"error", e}});
    j["failed_chains"] = f;
  }
  j["grid"] = sum.grid;
  J st = J::object();
  for (std::size_t i = 0; i < sum.states.size(); ++i) {
    st[m.state_names()[i]] = {{"q05", sum.states[i].q05}, {"q50", sum.states[i].q50}, {"q95", sum.states[i].q95}};
  }
  j["states"] = st;
  write_text(path, j.dump(2) + "\n");
}

// ---------------------------------------------------------------------------
// Posterior predictive

PredictiveResult posterior_predictive(const OdeModel& model, std::span<const double> theta_samples,
                                      std::size_t theta_dim, std::span<const double> x_init, double horizon,
                                      double dt, std::span<const double> sigma_y, Rng& rng) {
  if (theta_dim != model.param_dim()) throw ShapeError("posterior_predictive: theta_dim differs from the model");
  if (theta_samples.empty() || theta_samples.size() % theta_dim != 0)
    throw DomainError("posterior_predictive: need at least one theta sample");
  if (sigma_y.size() != model.output_dim()) throw ShapeError("posterior_predictive: sigma_y has the wrong length");
  const std::size_t n = theta_samples.size() / theta_dim;
  const std::size_t dx = model.state_dim(), dy = model.output_dim();

  PredictiveResult out;
  std::vector<Trajectory> runs;
  std::vector<std::size_t> used;
  for (std::size_t k = 0; k < n; ++k) {
    const auto th = theta_samples.subspan(k * theta_dim, theta_dim);
    try {
      runs.push_back(rk4_integrate(model, x_init, th, 0.0, horizon, dt));
      used.push_back(k);
    } catch (const DivergenceError&) {
      out.flagged.push_back(k);
    }
  }
  out.used = runs.size();
  if (runs.empty()) throw DivergenceError("posterior_predictive: every sample diverged");
  out.times = runs.front().times;
  const std::size_t nt = out.times.size();
  out.states.resize(dx);
  out.measurements.resize(dy);

  // Noise is drawn in (sample, time, channel) order so bands do not depend on quantile evaluation order.
  std::vector<double> ys(runs.size() * nt * dy);
  std::vector<double> y(dy);
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const auto th = theta_samples.subspan(used[r] * theta_dim, theta_dim);
    for (std::size_t i = 0; i < nt; ++i) {
      model.response(runs[r].state(i), out.times[i], th, y);
      for (std::size_t c = 0; c < dy; ++c) ys[(r * nt + i) * dy + c] = y[c] + sigma_y[c] * rng.gaussian();
    }
  }
  std::vector<double> col(runs.size());
  for (std::size_t i = 0; i < nt; ++i) {
    for (std::size_t d = 0; d < dx; ++d) {
      for (std::size_t r = 0; r < runs.size(); ++r) col[r] = runs[r].state(i)[d];
      push_band(out.states[d], col);
    }
    for (std::size_t c = 0; c < dy; ++c) {
      for (std::size_t r = 0; r < runs.size(); ++r) col[r] = ys[(r * nt + i) * dy + c];
      push_band(out.measurements[c], col);
    }
  }
  return out;
}

double mse_metric(std::span<const double> pred_disp, std::span<const double> pred_acc,
                  std::span<const double> meas_disp, std::span<const double> meas_acc, double var_d, double var_a) {
  const std::size_t n = meas_disp.size();
  if (n == 0) throw DomainError("mse_metric: no measurements");
  if (meas_acc.size() != n) throw ShapeError("mse_metric: displacement and acceleration lengths differ");
  if (pred_disp.empty() || pred_disp.size() % n != 0 || pred_acc.size() != pred_disp.size())
    throw ShapeError("mse_metric: predictions must be whole rows of the measurement length");
  if (!(var_d > 0.0) || !(var_a > 0.0)) throw DomainError("mse_metric: variances must be > 0");
  const std::size_t s = pred_disp.size() / n;
  double total = 0.0;
  for (std::size_t k = 0; k < s; ++k) {
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double ed = pred_disp[k * n + i] - meas_disp[i];
      const double ea = pred_acc[k * n + i] - meas_acc[i];
      acc += ed * ed / var_d + ea * ea / var_a;
    }
    total += 100.0 * acc / static_cast<double>(n);
  }
  return total / static_cast<double>(s);
}

// ---------------------------------------------------------------------------
// Commands

namespace {

void write_nsvi_trace(const fs::path& path, const Experiment& exp, const FitResult& r, bool filter) {
  std::vector<std::string> header{"iter", "elbo_like", "elbo_ham", "elbo_prior", "elbo_entropy", "elbo_partition"};
  if (!filter) {
    for (const auto& n : exp.model->param_names()) header.push_back(n);
  }
  for (auto& n : x0_names(*exp.model)) header.push_back(n);
  csv::Writer w(path, header);
  for (const auto& row : r.nsvi_trace) {
    std::vector<double> vals{row.like, row.ham, row.prior, row.entropy, row.partition};
    vals.insert(vals.end(), row.means.begin(), row.means.end());
    const long long it = static_cast<long long>(row.iter);
    w.row(std::span<const long long>(&it, 1), vals);
  }
}

void write_langevin_trace(const fs::path& path, const Experiment& exp, const FitResult& r) {
  std::vector<std::string> header{"iter", "chain"};
  for (const auto& n : exp.model->param_names()) header.push_back(n);
  csv::Writer w(path, header);
  const std::size_t nth = exp.model->param_dim();
  for (std::size_t k = 0; k < r.trace_iter.size(); ++k) {
    const long long ints[2] = {static_cast<long long>(r.trace_iter[k]), static_cast<long long>(r.trace_chain[k])};
    w.row(ints, row_of(r.trace_theta, k, nth));
  }
}

std::string run_fit(const Experiment& exp, Command cmd, const RunOptions& opt, std::uint64_t seed,
                    std::size_t threads) {
  const fs::path& dir = opt.out_dir;
  FitResult r = fit(exp, cmd, seed, threads);
  const bool nsvi = cmd == Command::FitNsvi || (cmd == Command::Filter && exp.config.filter.method == "nsvi");
  const bool filter = cmd == Command::Filter;
  if (nsvi) {
    write_nsvi_trace(dir / "trace.csv", exp, r, filter);
  } else if (!filter) {
    write_langevin_trace(dir / "trace.csv", exp, r);
  }
  write_failures(dir / "failures.json", r.failures, r.error);
  if (r.samples.size() == 0) {
    throw DivergenceError((r.error.empty() ? std::string("run produced no samples") : r.error) +
                          "; partial artifacts in " + dir.string());
  }
  write_samples(dir / "samples.csv", exp, r.samples);
  write_x0_chain(dir / "x0_chain.csv", exp, r.samples);
  PosteriorSummary sum = summarize(exp, r.samples);
  sum.failures = r.failures;
  write_summary_json(dir / "summary.json", exp, sum);

  std::ostringstream msg;
  msg << exp.config.name << ": " << r.samples.size() << " samples";
  for (std::size_t i = 0; i < sum.theta_names.size(); ++i)
    msg << (i ? ", " : "; ") << sum.theta_names[i] << " = " << sum.theta_mean[i];
  if (!r.failures.empty()) msg << "; " << r.failures.size() << " chain(s) failed";
  if (!r.error.empty()) msg << "; " << r.error;
  return msg.str();
}

std::string run_predict(const Experiment& exp, const RunOptions& opt, std::uint64_t seed) {
  const auto& cfg = exp.config;
  const OdeModel& m = *exp.model;
  const fs::path samples_path = opt.samples.empty() ? opt.out_dir / "samples.csv" : opt.samples;
  const PosteriorSamples s = read_samples(samples_path, exp);
  std::vector<double> theta;
  std::size_t n = s.size();
  if (s.theta_dim > 0) {
    if (n == 0) throw DomainError("predict: " + samples_path.string() + " has no samples");
    const std::size_t use = std::min(n, cfg.predict.max_samples);
    for (std::size_t k = 0; k < use; ++k) {
      const std::size_t row = k * n / use;
      const auto th = row_of(s.theta, row, s.theta_dim);
      theta.insert(theta.end(), th.begin(), th.end());
    }
  } else {
    const auto& th = cfg.filter.theta.empty() ? cfg.data.theta_true : cfg.filter.theta;
    if (th.empty()) throw ConfigError("predict: samples carry no parameters and filter.theta is not set");
    theta = th;
  }
  const auto& x_init = cfg.predict.x_init.empty() ? cfg.data.x_init : cfg.predict.x_init;
  if (x_init.empty()) throw ConfigError("predict.x_init: required when data.x_init is not set");
  const double horizon = cfg.predict.horizon > 0.0 ? cfg.predict.horizon : cfg.window;
  Rng rng = Rng::stream(seed, 2);
  const auto res = posterior_predictive(m, theta, m.param_dim(), x_init, horizon, cfg.predict.dt, exp.data.sigma_y, rng);

  std::vector<std::string> header{"t"};
  auto add = [&](const std::vector<std::string>& names) {
    for (const auto& n : names) {
      for (const char* q : {"_q05", "_q50", "_q95"}) header.push_back(n + q);
    }
  };
  add(m.state_names());
  add(m.output_names());
  csv::Writer w(opt.out_dir / "predictive.csv", header);
  std::vector<double> vals;
  for (std::size_t i = 0; i < res.times.size(); ++i) {
    vals.assign(1, res.times[i]);
    for (const auto* bands : {&res.states, &res.measurements}) {
      for (const Band& b : *bands) vals.insert(vals.end(), {b.q05[i], b.q50[i], b.q95[i]});
    }
    w.row(vals);
  }
  if (!res.flagged.empty()) {
    csv::Writer f(opt.out_dir / "predictive_flagged.csv", {"sample"});
    for (auto k : res.flagged) f.row(std::vector<double>{static_cast<double>(k)});
  }
  std::ostringstream msg;
  msg << cfg.name << ": predictive bands from " << res.used << " parameter samples";
  if (!res.flagged.empty()) msg << ", " << res.flagged.size() << " diverged";
  return msg.str();
}

}  // namespace

std::string run_experiment(const ExperimentConfig& config, Command cmd, const RunOptions& opt) {
  if (cmd == Command::Summarize) return summarize_dir(opt.out_dir);
  ExperimentConfig cfg = config;
  if (opt.seed) cfg.seed = *opt.seed;
  if (opt.threads) cfg.threads = *opt.threads;
  const Experiment exp = prepare(cfg);
  fs::create_directories(opt.out_dir);
  write_text(opt.out_dir / "config.toml", serialize_config(cfg));

  switch (cmd) {
    case Command::Simulate: {
      exp.data.write_csv(opt.out_dir / "data.csv");
      if (exp.truth) exp.truth->write_csv(opt.out_dir / "truth.csv");
      return cfg.name + ": " + std::to_string(exp.data.size()) + " measurements";
    }
    case Command::FitNsvi:
    case Command::FitNpsgld:
    case Command::Filter:
      return run_fit(exp, cmd, opt, cfg.seed, cfg.threads);
    case Command::Predict:
      return run_predict(exp, opt, cfg.seed);
    case Command::Summarize:
      break;
  }
  return {};
}

std::string summarize_dir(const fs::path& dir) {
  const ExperimentConfig cfg = parse_config(dir / "config.toml");
  const Experiment exp = prepare(cfg);
  PosteriorSamples s = read_samples(dir / "samples.csv", exp);
  read_x0_chain(dir / "x0_chain.csv", s, exp.model->state_dim());
  PosteriorSummary sum = summarize(exp, s);
  const fs::path failures = dir / "failures.json";
  if (fs::exists(failures)) {
    const auto j = nlohmann::json::parse(read_text(failures));
    for (const auto& f : j.at("failed_chains")) sum.failures.emplace_back(f.at("chain"), f.at("error"));
  }
  write_summary_json(dir / "summary.json", exp, sum);
  return cfg.name + ": summarized " + std::to_string(s.size()) + " samples";
}

}  // namespace niff
