#include "saalae/eval/study.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <stdexcept>

#include "saalae/eval/metrics.hpp"

namespace saalae::eval {

std::vector<NamedCriterion> default_criteria(std::uint64_t seed) {
  return {{"fid", [](const Matrix& a, const Matrix& b) { return fid(a, b); }},
          {"emd", [seed](const Matrix& a, const Matrix& b) { return emd(a, b, kEmdProjections, seed); }},
          {"kld", [](const Matrix& a, const Matrix& b) { return kld(a, b); }},
          {"jsd", [](const Matrix& a, const Matrix& b) { return jsd(a, b); }}};
}

std::string monotonicity_verdict(const std::vector<double>& values) {
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (!(values[i] > values[i - 1])) return "non-monotone";
  }
  return "monotone";
}

const CriterionCurve& StudyResult::curve(const std::string& kind, const std::string& criterion) const {
  for (const auto& k : kinds) {
    if (k.kind != kind) continue;
    for (const auto& c : k.curves) {
      if (c.criterion == criterion) return c;
    }
  }
  throw std::out_of_range("study has no curve for " + kind + "/" + criterion);
}

nlohmann::json StudyResult::to_json() const {
  nlohmann::json j = {{"schema_version", schema_version}, {"study", study},      {"extractor", extractor},
                      {"seed", seed},                     {"n_images", n_images}};
  if (study == "criteria") {
    auto& arr = j["kinds"] = nlohmann::json::array();
    for (const auto& k : kinds) {
      nlohmann::json curves = nlohmann::json::array();
      for (const auto& c : k.curves) {
        curves.push_back({{"name", c.criterion}, {"raw", c.raw}, {"normalized", c.normalized}, {"verdict", c.verdict}});
      }
      arr.push_back({{"kind", k.kind}, {"levels", k.levels}, {"parameters", k.parameters}, {"criteria", curves}});
    }
  } else {
    j["related"] = {{"kind", related_kind}, {"level", related_level}};
    j["resamples"] = resamples;
    j["sizes"] = sizes;
    j["fid"] = fid;
    j["mean"] = mean;
    j["std"] = stddev;
    j["cv"] = cv;
  }
  return j;
}

StudyResult StudyResult::from_json(const nlohmann::json& j) {
  StudyResult r;
  r.schema_version = j.at("schema_version").get<int>();
  if (r.schema_version != kSchemaVersion) {
    throw std::runtime_error("unsupported study schema version " + std::to_string(r.schema_version));
  }
  r.study = j.at("study").get<std::string>();
  r.extractor = j.at("extractor").get<std::string>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.n_images = j.at("n_images").get<std::int64_t>();
  if (r.study == "criteria") {
    for (const auto& k : j.at("kinds")) {
      KindCurves kc;
      kc.kind = k.at("kind").get<std::string>();
      kc.levels = k.at("levels").get<std::vector<int>>();
      kc.parameters = k.at("parameters").get<std::vector<double>>();
      for (const auto& c : k.at("criteria")) {
        kc.curves.push_back({c.at("name").get<std::string>(), c.at("raw").get<std::vector<double>>(), c.at("normalized").get<std::vector<double>>(),
                             c.at("verdict").get<std::string>()});
      }
      r.kinds.push_back(std::move(kc));
    }
  } else if (r.study == "sample_size") {
    r.related_kind = j.at("related").at("kind").get<std::string>();
    r.related_level = j.at("related").at("level").get<int>();
    r.resamples = j.at("resamples").get<int>();
    r.sizes = j.at("sizes").get<std::vector<int>>();
    r.fid = j.at("fid").get<std::vector<std::vector<double>>>();
    r.mean = j.at("mean").get<std::vector<double>>();
    r.stddev = j.at("std").get<std::vector<double>>();
    r.cv = j.at("cv").get<std::vector<double>>();
  } else {
    throw std::runtime_error("unknown study type '" + r.study + "'");
  }
  return r;
}

StudyResult criterion_study(std::span<const data::Image> images, const FeatureExtractor& extractor,
                            const std::vector<NamedCriterion>& criteria, const CriterionStudyOptions& options) {
  if (images.size() < options.min_images) {
    throw std::invalid_argument("criterion_study: need at least " + std::to_string(options.min_images) + " images, got " +
                                std::to_string(images.size()));
  }
  if (criteria.empty()) throw std::invalid_argument("criterion_study: no criteria");
  StudyResult r;
  r.study = "criteria";
  r.extractor = extractor.name();
  r.seed = options.seed;
  r.n_images = static_cast<std::int64_t>(images.size());
  const Matrix source = extractor.extract(images);
  for (auto kind : options.kinds) {
    KindCurves kc;
    kc.kind = to_string(kind);
    const auto params = level_parameters(kind);
    for (const auto& c : criteria) kc.curves.push_back({c.name, {}, {}, {}});
    for (int level = 1; level <= 3; ++level) {
      kc.levels.push_back(level);
      kc.parameters.push_back(params[std::size_t(level - 1)]);
      const Matrix perturbed = extractor.extract(perturb(images, kind, level, options.seed));
      for (std::size_t i = 0; i < criteria.size(); ++i) kc.curves[i].raw.push_back(criteria[i].fn(source, perturbed));
    }
    for (auto& c : kc.curves) {
      const double base = c.raw.front();
      for (double v : c.raw) c.normalized.push_back(base != 0 ? v / base : v);
      c.verdict = monotonicity_verdict(c.raw);
    }
    r.kinds.push_back(std::move(kc));
  }
  return r;
}

StudyResult sample_size_study(std::span<const data::Image> images, const FeatureExtractor& extractor,
                              const SampleSizeOptions& options) {
  if (options.sizes.empty() || options.resamples < 2) {
    throw std::invalid_argument("sample_size_study: need sizes and at least 2 resamples");
  }
  const int max_size = *std::max_element(options.sizes.begin(), options.sizes.end());
  if (*std::min_element(options.sizes.begin(), options.sizes.end()) < 2) {
    throw std::invalid_argument("sample_size_study: sizes must be >= 2");
  }
  if (images.size() < 2 * static_cast<std::size_t>(max_size)) {
    throw std::invalid_argument("sample_size_study: size " + std::to_string(max_size) + " exceeds half the dataset (" +
                                std::to_string(images.size()) + " images)");
  }
  const Matrix base = extractor.extract(images);
  const Matrix related = extractor.extract(perturb(images, options.related, options.related_level, options.seed));

  StudyResult r;
  r.study = "sample_size";
  r.extractor = extractor.name();
  r.seed = options.seed;
  r.n_images = static_cast<std::int64_t>(images.size());
  r.related_kind = to_string(options.related);
  r.related_level = options.related_level;
  r.resamples = options.resamples;
  r.sizes = options.sizes;

  std::vector<std::vector<std::size_t>> perms;
  for (int k = 0; k < options.resamples; ++k) {
    std::vector<std::size_t> p(images.size());
    std::iota(p.begin(), p.end(), 0);
    std::mt19937_64 rng(options.seed * 1000003ULL + std::uint64_t(k) + 1);
    std::shuffle(p.begin(), p.end(), rng);
    perms.push_back(std::move(p));
  }
  for (int n : options.sizes) {
    std::vector<double> values;
    for (const auto& p : perms) {
      Matrix a(n, base.cols()), b(n, base.cols());
      for (int i = 0; i < n; ++i) {
        a.row(i) = base.row(Eigen::Index(p[std::size_t(i)]));
        b.row(i) = related.row(Eigen::Index(p[std::size_t(n + i)]));
      }
      values.push_back(fid(a, b));
    }
    const double m = std::accumulate(values.begin(), values.end(), 0.0) / double(values.size());
    double ss = 0;
    for (double v : values) ss += (v - m) * (v - m);
    const double sd = std::sqrt(ss / double(values.size() - 1));
    r.fid.push_back(values);
    r.mean.push_back(m);
    r.stddev.push_back(sd);
    r.cv.push_back(m > 0 ? sd / m : 0.0);
  }
  return r;
}

namespace {

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"};

struct Panel {
  double x, y, w, h;
};

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(4);
  os << v;
  return os.str();
}

// Draws one set of polylines in a panel with linear axes over the given ranges.
void draw_panel(std::ostringstream& svg, const Panel& p, const std::string& title, const std::vector<double>& xs,
                const std::vector<std::string>& xlabels, const std::vector<std::pair<std::string, std::vector<double>>>& lines,
                const std::vector<double>* errors = nullptr) {
  double lo = 0, hi = 0;
  for (const auto& [name, ys] : lines)
    for (std::size_t i = 0; i < ys.size(); ++i) {
      const double e = errors ? (*errors)[i] : 0.0;
      if (std::isfinite(ys[i])) hi = std::max(hi, ys[i] + e), lo = std::min(lo, ys[i] - e);
    }
  if (hi <= lo) hi = lo + 1;
  const double xmin = xs.front(), xmax = xs.back() > xs.front() ? xs.back() : xs.front() + 1;
  auto px = [&](double x) { return p.x + 40 + (x - xmin) / (xmax - xmin) * (p.w - 60); };
  auto py = [&](double y) { return p.y + p.h - 30 - (y - lo) / (hi - lo) * (p.h - 60); };
  svg << "<rect x='" << p.x << "' y='" << p.y << "' width='" << p.w << "' height='" << p.h
      << "' fill='white' stroke='#ccc'/>\n";
  svg << "<text x='" << p.x + p.w / 2 << "' y='" << p.y + 16 << "' text-anchor='middle' font-size='13'>" << title
      << "</text>\n";
  svg << "<line x1='" << px(xmin) << "' y1='" << py(lo) << "' x2='" << px(xmax) << "' y2='" << py(lo)
      << "' stroke='black'/>\n";
  svg << "<line x1='" << px(xmin) << "' y1='" << py(lo) << "' x2='" << px(xmin) << "' y2='" << py(hi)
      << "' stroke='black'/>\n";
  svg << "<text x='" << px(xmin) - 4 << "' y='" << py(hi) + 4 << "' text-anchor='end' font-size='10'>" << fmt(hi)
      << "</text>\n";
  svg << "<text x='" << px(xmin) - 4 << "' y='" << py(lo) + 4 << "' text-anchor='end' font-size='10'>" << fmt(lo)
      << "</text>\n";
  for (std::size_t i = 0; i < xs.size(); ++i) {
    svg << "<text x='" << px(xs[i]) << "' y='" << py(lo) + 14 << "' text-anchor='middle' font-size='10'>" << xlabels[i]
        << "</text>\n";
  }
  for (std::size_t l = 0; l < lines.size(); ++l) {
    const char* colour = kPalette[l % std::size(kPalette)];
    svg << "<polyline fill='none' stroke='" << colour << "' stroke-width='2' points='";
    for (std::size_t i = 0; i < xs.size(); ++i) svg << px(xs[i]) << ',' << py(lines[l].second[i]) << ' ';
    svg << "'/>\n";
    for (std::size_t i = 0; i < xs.size(); ++i) {
      svg << "<circle cx='" << px(xs[i]) << "' cy='" << py(lines[l].second[i]) << "' r='3' fill='" << colour << "'/>\n";
      if (errors) {
        const double y = lines[l].second[i], e = (*errors)[i];
        svg << "<line x1='" << px(xs[i]) << "' y1='" << py(y - e) << "' x2='" << px(xs[i]) << "' y2='" << py(y + e)
            << "' stroke='" << colour << "'/>\n";
      }
    }
    svg << "<text x='" << p.x + p.w - 10 << "' y='" << p.y + 32 + 14 * double(l) << "' text-anchor='end' font-size='11' fill='"
        << colour << "'>" << lines[l].first << "</text>\n";
  }
}

}  // namespace

void write_svg_plot(const StudyResult& result, const std::filesystem::path& path) {
  std::ostringstream svg;
  double width = 0, height = 0;
  std::ostringstream body;
  if (result.study == "criteria") {
    const double pw = 320, ph = 240;
    width = pw * double(std::max<std::size_t>(1, result.kinds.size()));
    height = ph;
    for (std::size_t k = 0; k < result.kinds.size(); ++k) {
      const auto& kc = result.kinds[k];
      std::vector<double> xs(kc.levels.begin(), kc.levels.end());
      std::vector<std::string> labels;
      for (int l : kc.levels) labels.push_back(std::to_string(l));
      std::vector<std::pair<std::string, std::vector<double>>> lines;
      for (const auto& c : kc.curves) lines.emplace_back(c.criterion, c.normalized);
      draw_panel(body, {pw * double(k), 0, pw, ph}, kc.kind + " (" + result.extractor + ", normalized)", xs, labels, lines);
    }
  } else {
    width = 480;
    height = 300;
    std::vector<double> xs;
    std::vector<std::string> labels;
    for (int s : result.sizes) {
      xs.push_back(std::log10(double(s)));
      labels.push_back(std::to_string(s));
    }
    draw_panel(body, {0, 0, width, height}, "FID vs sample size (" + result.extractor + ")", xs, labels,
               {{"mean FID", result.mean}}, &result.stddev);
  }
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << width << "' height='" << height
      << "' font-family='sans-serif'>\n"
      << body.str() << "</svg>\n";
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << svg.str();
}

}  // namespace saalae::eval
