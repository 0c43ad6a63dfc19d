#include "saalae/data/blueprint.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace saalae::data {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr float kHatchInk = 0.45f;

struct Local {
  double x, y;
};

Local to_local(const BlueprintSpec& s, double x, double y) {
  const double dx = x - s.center_x, dy = y - s.center_y;
  const double c = std::cos(s.rotation), sn = std::sin(s.rotation);
  return {c * dx + sn * dy, -sn * dx + c * dy};
}

// Exact signed distance to a centred rounded rectangle.
double rounded_box(double x, double y, double a, double b, double r) {
  const double qx = std::abs(x) - (a - r), qy = std::abs(y) - (b - r);
  const double ox = std::max(qx, 0.0), oy = std::max(qy, 0.0);
  return std::hypot(ox, oy) + std::min(std::max(qx, qy), 0.0) - r;
}

double local_distance(const BlueprintSpec& s, double lx, double ly) {
  return rounded_box(lx, ly, s.half_width, s.half_height, s.corner_radius);
}

double segment_distance(double px, double py, double ax, double ay, double bx, double by) {
  const double vx = bx - ax, vy = by - ay;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(px - (ax + t * vx), py - (ay + t * vy));
}

float stroke_coverage(double distance, double width) {
  return static_cast<float>(std::clamp(width / 2 + 0.5 - distance, 0.0, 1.0));
}

// Ray parameter where the outer distance along direction (dx, dy) from the centre reaches `level`.
double ray_crossing(const BlueprintSpec& s, double dx, double dy, double level) {
  double lo = 0, hi = std::hypot(s.half_width, s.half_height) + 1;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (local_distance(s, mid * dx, mid * dy) < level ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("blueprint spec: " + what);
}

double uniform(std::mt19937_64& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }

}  // namespace

void BlueprintSpec::validate() const {
  for (double v : {center_x, center_y, half_width, half_height, corner_radius, rotation, wall_gap, strut_phase, hatch_x,
                   hatch_y, hatch_radius, stroke_width, jitter}) {
    require(std::isfinite(v), "non-finite parameter");
  }
  require(family >= 0 && family < kFamilyCount, "family must be in 0..3");
  require(resolution >= 8, "resolution must be at least 8");
  require(half_width > 0 && half_height > 0, "outer contour is degenerate");
  require(corner_radius >= 0 && corner_radius <= std::min(half_width, half_height), "corner radius exceeds the box");
  require(stroke_width >= 0.5 && stroke_width <= 4, "stroke width must be in [0.5, 4]");
  require(wall_gap > stroke_width, "wall gap must exceed the stroke width");
  require(wall_gap < std::min(half_width, half_height) - stroke_width,
          "inner contour self-intersects (wall gap too large for the outer contour)");
  require(strut_count >= 0 && strut_count <= 32, "strut count must be in 0..32");
  require(jitter >= 0, "jitter must be non-negative");
  const double c = std::abs(std::cos(rotation)), sn = std::abs(std::sin(rotation));
  const double ra = half_width - corner_radius, rb = half_height - corner_radius;
  const double ex = ra * c + rb * sn + corner_radius + stroke_width;
  const double ey = ra * sn + rb * c + corner_radius + stroke_width;
  require(center_x - ex >= 0 && center_x + ex <= resolution && center_y - ey >= 0 && center_y + ey <= resolution,
          "outer contour leaves the canvas");
  if (hatch) {
    require(hatch_radius > 0, "hatch radius must be positive");
    const auto l = to_local(*this, hatch_x, hatch_y);
    require(local_distance(*this, l.x, l.y) + hatch_radius <= -wall_gap - stroke_width,
            "hatch region must lie inside the inner contour");
  }
}

std::array<double, 4> BlueprintSpec::shape_parameters() const {
  const auto l = to_local(*this, hatch_x, hatch_y);
  const double inner = half_width - wall_gap;
  return {half_height / half_width, corner_radius / std::min(half_width, half_height), strut_count / 4.0,
          hatch ? l.x / inner : 0.0};
}

nlohmann::json BlueprintSpec::to_json() const {
  return {{"family", family},
          {"resolution", resolution},
          {"center", {center_x, center_y}},
          {"half_size", {half_width, half_height}},
          {"corner_radius", corner_radius},
          {"rotation", rotation},
          {"wall_gap", wall_gap},
          {"strut_count", strut_count},
          {"strut_phase", strut_phase},
          {"hatch", hatch},
          {"hatch_center", {hatch_x, hatch_y}},
          {"hatch_radius", hatch_radius},
          {"stroke_width", stroke_width},
          {"jitter", jitter}};
}

BlueprintSpec BlueprintSpec::from_json(const nlohmann::json& j) {
  BlueprintSpec s;
  s.family = j.at("family").get<int>();
  s.resolution = j.at("resolution").get<int>();
  s.center_x = j.at("center").at(0).get<double>();
  s.center_y = j.at("center").at(1).get<double>();
  s.half_width = j.at("half_size").at(0).get<double>();
  s.half_height = j.at("half_size").at(1).get<double>();
  s.corner_radius = j.at("corner_radius").get<double>();
  s.rotation = j.at("rotation").get<double>();
  s.wall_gap = j.at("wall_gap").get<double>();
  s.strut_count = j.at("strut_count").get<int>();
  s.strut_phase = j.at("strut_phase").get<double>();
  s.hatch = j.at("hatch").get<bool>();
  s.hatch_x = j.at("hatch_center").at(0).get<double>();
  s.hatch_y = j.at("hatch_center").at(1).get<double>();
  s.hatch_radius = j.at("hatch_radius").get<double>();
  s.stroke_width = j.at("stroke_width").get<double>();
  s.jitter = j.at("jitter").get<double>();
  return s;
}

BlueprintSpec family_base(int family, int resolution) {
  if (family < 0 || family >= kFamilyCount) throw std::invalid_argument("family must be in 0..3");
  if (resolution < 32) throw std::invalid_argument("synthetic blueprints need resolution >= 32");
  const double u = resolution / 64.0;
  BlueprintSpec s;
  s.family = family;
  s.resolution = resolution;
  s.center_x = s.center_y = resolution / 2.0;
  s.half_width = 22 * u;
  s.half_height = s.half_width * (1.0 - 0.1 * family);
  s.corner_radius = (0.6 - 0.12 * family) * std::min(s.half_width, s.half_height);
  s.rotation = 0;
  s.wall_gap = 6 * u;
  s.strut_count = 3 + family;
  s.strut_phase = kPi / 2;
  s.hatch = true;
  s.hatch_radius = 4 * u;
  s.hatch_x = s.center_x + (-0.3 + 0.2 * family) * (s.half_width - s.wall_gap);
  s.hatch_y = s.center_y;
  s.stroke_width = 1.5;
  s.jitter = 0.05;
  return s;
}

BlueprintSpec sample_spec(int family, int resolution, std::mt19937_64& rng) {
  const auto base = family_base(family, resolution);
  const double u = resolution / 64.0;
  BlueprintSpec s = base;
  const double aspect = base.half_height / base.half_width + uniform(rng, -0.03, 0.03);
  const double corner = base.corner_radius / std::min(base.half_width, base.half_height) + uniform(rng, -0.04, 0.04);
  s.half_width = base.half_width + uniform(rng, -1.5, 1.5) * u;
  s.half_height = s.half_width * aspect;
  s.corner_radius = corner * std::min(s.half_width, s.half_height);
  s.rotation = uniform(rng, -0.08, 0.08);
  s.center_x += uniform(rng, -1.5, 1.5) * u;
  s.center_y += uniform(rng, -1.5, 1.5) * u;
  s.wall_gap = base.wall_gap + uniform(rng, -0.5, 0.5) * u;
  s.strut_phase = base.strut_phase + uniform(rng, -0.15, 0.15);
  s.stroke_width = uniform(rng, 1.25, 1.75);
  s.hatch = std::bernoulli_distribution(0.85)(rng);
  // Hatch centre placed in the rotated frame so its offset stays a family parameter.
  const double offset = (-0.3 + 0.2 * family + uniform(rng, -0.04, 0.04)) * (s.half_width - s.wall_gap);
  const double oy = uniform(rng, -1.0, 1.0) * u;
  const double c = std::cos(s.rotation), sn = std::sin(s.rotation);
  s.hatch_x = s.center_x + c * offset - sn * oy;
  s.hatch_y = s.center_y + sn * offset + c * oy;
  if (s.hatch) {
    // Small canvases leave little room inside the inner contour; shrink the disc to fit or drop it.
    const auto l = to_local(s, s.hatch_x, s.hatch_y);
    const double room = -(local_distance(s, l.x, l.y) + s.wall_gap + s.stroke_width);
    s.hatch_radius = std::min(s.hatch_radius, room);
    s.hatch = s.hatch_radius >= 1.0;
  }
  s.validate();
  return s;
}

double parameter_distance(const BlueprintSpec& a, const BlueprintSpec& b) {
  const auto pa = a.shape_parameters(), pb = b.shape_parameters();
  double acc = 0;
  for (std::size_t i = 0; i < pa.size(); ++i) acc += (pa[i] - pb[i]) * (pa[i] - pb[i]);
  return std::sqrt(acc);
}

double outer_contour_distance(const BlueprintSpec& spec, double x, double y) {
  const auto l = to_local(spec, x, y);
  return local_distance(spec, l.x, l.y);
}

BlueprintLayers render_layers(const BlueprintSpec& spec, std::uint64_t seed) {
  spec.validate();
  const int r = spec.resolution;
  BlueprintLayers layers{Image(r, r), Image(r, r), Image(r, r), Image(r, r)};

  struct Segment {
    double ax, ay, bx, by;
  };
  std::vector<Segment> struts;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const double c = std::cos(spec.rotation), sn = std::sin(spec.rotation);
  for (int k = 0; k < spec.strut_count; ++k) {
    const double angle = spec.strut_phase + 2 * kPi * k / spec.strut_count + spec.jitter * normal(rng);
    const double dx = std::cos(angle), dy = -std::sin(angle);
    const double t0 = ray_crossing(spec, dx, dy, -spec.wall_gap), t1 = ray_crossing(spec, dx, dy, 0.0);
    const double lx0 = t0 * dx, ly0 = t0 * dy, lx1 = t1 * dx, ly1 = t1 * dy;
    struts.push_back({spec.center_x + c * lx0 - sn * ly0, spec.center_y + sn * lx0 + c * ly0,
                      spec.center_x + c * lx1 - sn * ly1, spec.center_y + sn * lx1 + c * ly1});
  }

  for (int y = 0; y < r; ++y) {
    for (int x = 0; x < r; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      const double d = outer_contour_distance(spec, px, py);
      layers.outer.at(x, y) = stroke_coverage(std::abs(d), spec.stroke_width);
      layers.inner.at(x, y) = stroke_coverage(std::abs(d + spec.wall_gap), spec.stroke_width);
      float strut = 0.0f;
      for (const auto& s : struts) {
        strut = std::max(strut, stroke_coverage(segment_distance(px, py, s.ax, s.ay, s.bx, s.by), spec.stroke_width));
      }
      layers.struts.at(x, y) = strut;
      if (spec.hatch) {
        const double dh = std::hypot(px - spec.hatch_x, py - spec.hatch_y) - spec.hatch_radius;
        layers.hatch.at(x, y) = static_cast<float>(std::clamp(0.5 - dh, 0.0, 1.0));
      }
    }
  }
  return layers;
}

Image generate_blueprint(const BlueprintSpec& spec, std::uint64_t seed) {
  const auto layers = render_layers(spec, seed);
  Image out(spec.resolution, spec.resolution, 1.0f);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    const float ink = std::max({layers.outer.pixels[i], layers.inner.pixels[i], layers.struts.pixels[i],
                                kHatchInk * layers.hatch.pixels[i]});
    out.pixels[i] = std::clamp(1.0f - ink, 0.0f, 1.0f);
  }
  return out;
}

}  // namespace saalae::data
