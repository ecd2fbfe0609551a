#include "faultdx/bayesopt/search_space.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "faultdx/error.hpp"
#include "faultdx/rng.hpp"

namespace faultdx::bayesopt {

using nlohmann::json;

Dim Dim::continuous(std::string name, double lo, double hi, Scale scale) {
  Dim d;
  d.name = std::move(name);
  d.kind = DimKind::continuous;
  d.lo = lo;
  d.hi = hi;
  d.scale = scale;
  return d;
}

Dim Dim::integer(std::string name, std::int64_t lo, std::int64_t hi) {
  Dim d;
  d.name = std::move(name);
  d.kind = DimKind::integer;
  d.lo = static_cast<double>(lo);
  d.hi = static_cast<double>(hi);
  return d;
}

Dim Dim::categorical(std::string name, std::vector<std::string> options) {
  Dim d;
  d.name = std::move(name);
  d.kind = DimKind::categorical;
  d.options = std::move(options);
  d.lo = 0.0;
  d.hi = d.options.empty() ? 0.0 : static_cast<double>(d.options.size() - 1);
  return d;
}

SearchSpace::SearchSpace(std::vector<Dim> dims) : dims_(std::move(dims)) {
  if (dims_.empty()) throw InvalidArgument("search space has no dimensions");
  for (const auto& d : dims_) {
    if (std::count_if(dims_.begin(), dims_.end(), [&](const Dim& o) { return o.name == d.name; }) > 1) {
      throw InvalidArgument("dimension name '" + d.name + "' appears twice");
    }
    if (d.kind == DimKind::categorical) {
      if (d.options.empty()) throw InvalidArgument("categorical dimension '" + d.name + "' has no options");
    } else {
      if (!std::isfinite(d.lo) || !std::isfinite(d.hi) || !(d.lo < d.hi)) {
        throw InvalidArgument("dimension '" + d.name + "' requires lo < hi");
      }
      if (d.kind == DimKind::continuous && d.scale == Scale::log && !(d.lo > 0.0)) {
        throw InvalidArgument("log-scale dimension '" + d.name + "' requires lo > 0");
      }
      if (d.kind == DimKind::integer && (d.lo != std::round(d.lo) || d.hi != std::round(d.hi))) {
        throw InvalidArgument("integer dimension '" + d.name + "' needs integral bounds");
      }
    }
    encoded_size_ += d.encoded_width();
  }
}

std::size_t SearchSpace::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (dims_[i].name == name) return i;
  }
  throw InvalidArgument("unknown search dimension '" + name + "'");
}

void SearchSpace::check(const Config& config) const {
  if (config.values.size() != dims_.size()) throw InvalidArgument("config has the wrong number of values");
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    const auto& d = dims_[i];
    const double v = config.values[i];
    if (!std::isfinite(v) || v < d.lo || v > d.hi) {
      throw InvalidArgument("value " + std::to_string(v) + " out of bounds for '" + d.name + "'");
    }
    if (d.kind != DimKind::continuous && v != std::round(v)) {
      throw InvalidArgument("value for '" + d.name + "' must be integral");
    }
  }
}

std::vector<double> SearchSpace::to_unit(const Config& config) const {
  check(config);
  std::vector<double> u;
  u.reserve(encoded_size_);
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    const auto& d = dims_[i];
    const double v = config.values[i];
    switch (d.kind) {
      case DimKind::continuous:
        u.push_back(d.scale == Scale::log ? std::log(v / d.lo) / std::log(d.hi / d.lo) : (v - d.lo) / (d.hi - d.lo));
        break;
      case DimKind::integer:
        u.push_back((v - d.lo) / (d.hi - d.lo));
        break;
      case DimKind::categorical:
        for (std::size_t k = 0; k < d.options.size(); ++k) u.push_back(static_cast<double>(k) == v ? 1.0 : 0.0);
        break;
    }
  }
  return u;
}

Config SearchSpace::from_unit(const std::vector<double>& unit) const {
  if (unit.size() != encoded_size_) throw InvalidArgument("unit point has the wrong dimension");
  Config c;
  c.values.reserve(dims_.size());
  std::size_t pos = 0;
  for (const auto& d : dims_) {
    const double u = std::clamp(unit[pos], 0.0, 1.0);
    switch (d.kind) {
      case DimKind::continuous: {
        double v = d.scale == Scale::log ? d.lo * std::pow(d.hi / d.lo, u) : d.lo + u * (d.hi - d.lo);
        c.values.push_back(std::clamp(v, d.lo, d.hi));
        ++pos;
        break;
      }
      case DimKind::integer:
        c.values.push_back(std::clamp(std::round(d.lo + u * (d.hi - d.lo)), d.lo, d.hi));
        ++pos;
        break;
      case DimKind::categorical: {
        std::size_t best = 0;
        for (std::size_t k = 1; k < d.options.size(); ++k) {
          if (unit[pos + k] > unit[pos + best]) best = k;
        }
        c.values.push_back(static_cast<double>(best));
        pos += d.options.size();
        break;
      }
    }
  }
  return c;
}

json SearchSpace::config_to_json(const Config& config) const {
  check(config);
  json j = json::object();
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    const auto& d = dims_[i];
    const double v = config.values[i];
    switch (d.kind) {
      case DimKind::continuous: j[d.name] = v; break;
      case DimKind::integer: j[d.name] = static_cast<std::int64_t>(v); break;
      case DimKind::categorical: j[d.name] = d.options[static_cast<std::size_t>(v)]; break;
    }
  }
  return j;
}

Config SearchSpace::config_from_json(const json& j) const {
  Config c;
  for (const auto& d : dims_) {
    if (!j.contains(d.name)) throw DataError("config is missing '" + d.name + "'");
    const auto& v = j.at(d.name);
    if (d.kind == DimKind::categorical) {
      const auto it = std::find(d.options.begin(), d.options.end(), v.get<std::string>());
      if (it == d.options.end()) throw DataError("unknown option for '" + d.name + "'");
      c.values.push_back(static_cast<double>(it - d.options.begin()));
    } else {
      c.values.push_back(v.get<double>());
    }
  }
  check(c);
  return c;
}

void to_json(json& j, const Dim& d) {
  j = json{{"name", d.name}};
  switch (d.kind) {
    case DimKind::continuous:
      j["kind"] = "continuous";
      j["lo"] = d.lo;
      j["hi"] = d.hi;
      j["scale"] = d.scale == Scale::log ? "log" : "linear";
      break;
    case DimKind::integer:
      j["kind"] = "integer";
      j["lo"] = static_cast<std::int64_t>(d.lo);
      j["hi"] = static_cast<std::int64_t>(d.hi);
      break;
    case DimKind::categorical:
      j["kind"] = "categorical";
      j["options"] = d.options;
      break;
  }
}

void from_json(const json& j, Dim& d) {
  const auto kind = j.at("kind").get<std::string>();
  const auto name = j.at("name").get<std::string>();
  if (kind == "continuous") {
    d = Dim::continuous(name, j.at("lo").get<double>(), j.at("hi").get<double>(),
                        j.value("scale", std::string("linear")) == "log" ? Scale::log : Scale::linear);
  } else if (kind == "integer") {
    d = Dim::integer(name, j.at("lo").get<std::int64_t>(), j.at("hi").get<std::int64_t>());
  } else if (kind == "categorical") {
    d = Dim::categorical(name, j.at("options").get<std::vector<std::string>>());
  } else {
    throw InvalidArgument("unknown dimension kind '" + kind + "'");
  }
}

std::vector<Config> latin_hypercube(const SearchSpace& space, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw InvalidArgument("latin_hypercube requires n >= 1");
  Rng rng(seed);
  const auto& dims = space.dims();
  std::vector<std::vector<double>> unit(n, std::vector<double>(space.encoded_size(), 0.0));
  std::size_t pos = 0;
  for (const auto& d : dims) {
    if (d.kind == DimKind::categorical) {
      for (std::size_t i = 0; i < n; ++i) unit[i][pos + rng.below(d.options.size())] = 1.0;
      pos += d.options.size();
      continue;
    }
    std::vector<std::size_t> strata(n);
    std::iota(strata.begin(), strata.end(), 0);
    rng.shuffle(std::span(strata));
    for (std::size_t i = 0; i < n; ++i) {
      unit[i][pos] = (static_cast<double>(strata[i]) + rng.uniform()) / static_cast<double>(n);
    }
    ++pos;
  }
  std::vector<Config> out;
  out.reserve(n);
  for (const auto& u : unit) out.push_back(space.from_unit(u));
  return out;
}

}  // namespace faultdx::bayesopt
