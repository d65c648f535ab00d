#include "fact/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "nlohmann/json.hpp"

namespace fact::phantom {

namespace {

// Point in ellipsoid-local coordinates (unit sphere frame).
Vec3 to_local(const EllipsoidSpec& e, const Vec3& p) {
  const double th = e.rotation_deg * kPi / 180.0;
  const double c = std::cos(th), s = std::sin(th);
  const Vec3 d = p - e.center;
  // Rotate by -theta about z, then scale by inverse semi-axes.
  return {(c * d.x + s * d.y) / e.semi_axes.x,
          (-s * d.x + c * d.y) / e.semi_axes.y, d.z / e.semi_axes.z};
}

}  // namespace

void EllipsoidSpec::validate() const {
  if (!(semi_axes.x > 0 && semi_axes.y > 0 && semi_axes.z > 0))
    throw std::invalid_argument("EllipsoidSpec: semi_axes must be > 0");
  if (!std::isfinite(mu_delta))
    throw std::invalid_argument("EllipsoidSpec: mu_delta must be finite");
}

bool EllipsoidSpec::contains(const Vec3& p) const {
  const Vec3 q = to_local(*this, p);
  return q.dot(q) <= 1.0;
}

double EllipsoidSpec::chord_length(const Vec3& src, const Vec3& dst) const {
  // In the unit-sphere frame the segment is q(t) = q0 + t*(q1-q0), t in [0,1].
  // Solve |q(t)|^2 = 1 and clip the root interval to the segment.
  const Vec3 q0 = to_local(*this, src);
  const Vec3 q1 = to_local(*this, dst);
  const Vec3 d = q1 - q0;
  const double a = d.dot(d);
  if (a == 0.0) return 0.0;
  const double b = 2.0 * q0.dot(d);
  const double c = q0.dot(q0) - 1.0;
  const double disc = b * b - 4.0 * a * c;
  if (disc <= 0.0) return 0.0;
  const double sq = std::sqrt(disc);
  double t0 = (-b - sq) / (2.0 * a);
  double t1 = (-b + sq) / (2.0 * a);
  t0 = std::max(t0, 0.0);
  t1 = std::min(t1, 1.0);
  if (t1 <= t0) return 0.0;
  return (t1 - t0) * (dst - src).norm();
}

void Phantom::validate() const {
  if (nx < 1 || ny < 1 || nz < 1)
    throw std::invalid_argument("Phantom: dims must be >= 1");
  if (voxel_mm <= 0) throw std::invalid_argument("Phantom: voxel_mm must be > 0");
  for (const auto& e : components) e.validate();
}

void LungPhantomParams::validate() const {
  if (min_blobs > max_blobs || blob_radius_min_mm > blob_radius_max_mm ||
      blob_mu_min > blob_mu_max)
    throw std::invalid_argument("LungPhantomParams: degenerate range (min > max)");
  if (blob_radius_min_mm <= 0 || body_mu <= 0)
    throw std::invalid_argument("LungPhantomParams: non-positive size/mu");
}

Volume rasterize(const Phantom& ph) {
  ph.validate();
  Volume v(ph.nx, ph.ny, ph.nz, ph.voxel_mm);
  for (int z = 0; z < ph.nz; ++z) {
    for (int y = 0; y < ph.ny; ++y) {
      for (int x = 0; x < ph.nx; ++x) {
        const Vec3 p = v.voxel_center(x, y, z);
        double mu = 0.0;
        for (const auto& e : ph.components)
          if (e.contains(p)) mu += e.mu_delta;
        v.at(x, y, z) = mu;
      }
    }
  }
  return v;
}

double analytic_line_integral(const Phantom& ph, const Vec3& src, const Vec3& dst) {
  if ((dst - src).norm() == 0.0)
    throw std::invalid_argument("analytic_line_integral: ray endpoints must differ");
  double sum = 0.0;
  for (const auto& e : ph.components) sum += e.mu_delta * e.chord_length(src, dst);
  return sum;
}

Phantom make_lung_phantom(uint64_t seed, bool positive, int nx, int ny, int nz,
                          double voxel_mm, const LungPhantomParams& params) {
  params.validate();
  Phantom ph;
  ph.nx = nx;
  ph.ny = ny;
  ph.nz = nz;
  ph.voxel_mm = voxel_mm;
  ph.label = positive ? PhantomLabel::PositiveAnalog : PhantomLabel::NegativeAnalog;

  std::mt19937_64 rng(splitmix64(seed));
  auto uni = [&](double lo, double hi) {
    return std::uniform_real_distribution<double>(lo, hi)(rng);
  };

  // Orientation convention: +y is posterior (back of the chest at the image
  // bottom after reorientation), x is the left-right axis.
  const double ext_x = nx * voxel_mm, ext_y = ny * voxel_mm, ext_z = nz * voxel_mm;
  const double body_a = 0.42 * ext_x * uni(0.92, 1.0);
  const double body_b = 0.34 * ext_y * uni(0.92, 1.0);
  const double body_c = 0.55 * ext_z;

  EllipsoidSpec body;
  body.center = {0, 0, 0};
  body.semi_axes = {body_a, body_b, body_c};
  body.mu_delta = params.body_mu;
  ph.components.push_back(body);

  const double cavity_mu = params.body_mu * (params.lung_mu_fraction - 1.0);
  const double lung_a = 0.38 * body_a, lung_b = 0.72 * body_b, lung_c = 0.85 * body_c;
  const double lung_off = 0.48 * body_a;
  EllipsoidSpec left = body, right = body;
  left.center = {-lung_off, 0.05 * body_b, 0};
  left.semi_axes = {lung_a * uni(0.9, 1.0), lung_b * uni(0.9, 1.0), lung_c};
  left.rotation_deg = uni(-8, 8);
  left.mu_delta = cavity_mu;
  right = left;
  right.center = {lung_off, 0.05 * body_b, 0};
  right.semi_axes = {lung_a * uni(0.9, 1.0), lung_b * uni(0.9, 1.0), lung_c};
  right.rotation_deg = uni(-8, 8);
  ph.components.push_back(left);
  ph.components.push_back(right);

  if (positive) {
    const int n_blobs = std::uniform_int_distribution<int>(
        params.min_blobs, params.max_blobs)(rng);
    for (int i = 0; i < n_blobs; ++i) {
      // Bilateral: alternate lungs. Posterior bias: placement skewed to +y.
      const EllipsoidSpec& lung = (i % 2 == 0) ? ph.components[1] : ph.components[2];
      EllipsoidSpec blob;
      const double r = uni(params.blob_radius_min_mm, params.blob_radius_max_mm);
      const double post = std::pow(uni(0.0, 1.0), 0.5);  // biased toward +1
      blob.center = {lung.center.x + uni(-0.5, 0.5) * lung.semi_axes.x,
                     lung.center.y + (0.15 + 0.55 * post) * lung.semi_axes.y,
                     lung.center.z + uni(-0.6, 0.6) * lung.semi_axes.z};
      blob.semi_axes = {r, r * uni(0.7, 1.3), r * uni(0.7, 1.3)};
      blob.rotation_deg = uni(-45, 45);
      blob.mu_delta = uni(params.blob_mu_min, params.blob_mu_max);
      ph.components.push_back(blob);
    }
  }
  return ph;
}

Phantom make_lung_phantom(uint64_t seed, bool positive, const LungPhantomParams& params) {
  return make_lung_phantom(seed, positive, 256, 256, 64, 1.0, params);
}

std::string to_json(const Phantom& ph) {
  nlohmann::json j;
  j["dims"] = {ph.nx, ph.ny, ph.nz};
  j["voxel_mm"] = ph.voxel_mm;
  j["label"] = ph.label == PhantomLabel::PositiveAnalog   ? "positive"
               : ph.label == PhantomLabel::NegativeAnalog ? "negative"
                                                          : "unlabeled";
  auto& comps = j["components"] = nlohmann::json::array();
  for (const auto& e : ph.components) {
    comps.push_back({{"center", {e.center.x, e.center.y, e.center.z}},
                     {"semi_axes", {e.semi_axes.x, e.semi_axes.y, e.semi_axes.z}},
                     {"rotation_deg", e.rotation_deg},
                     {"mu_delta", e.mu_delta}});
  }
  return j.dump(2);
}

Phantom phantom_from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  Phantom ph;
  ph.nx = j.at("dims")[0];
  ph.ny = j.at("dims")[1];
  ph.nz = j.at("dims")[2];
  ph.voxel_mm = j.at("voxel_mm");
  const std::string label = j.value("label", "unlabeled");
  ph.label = label == "positive"   ? PhantomLabel::PositiveAnalog
             : label == "negative" ? PhantomLabel::NegativeAnalog
                                   : PhantomLabel::Unlabeled;
  for (const auto& c : j.at("components")) {
    EllipsoidSpec e;
    e.center = {c.at("center")[0], c.at("center")[1], c.at("center")[2]};
    e.semi_axes = {c.at("semi_axes")[0], c.at("semi_axes")[1], c.at("semi_axes")[2]};
    e.rotation_deg = c.value("rotation_deg", 0.0);
    e.mu_delta = c.at("mu_delta");
    ph.components.push_back(e);
  }
  ph.validate();
  return ph;
}

}  // namespace fact::phantom
