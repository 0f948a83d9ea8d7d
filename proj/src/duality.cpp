#include "dynbsde/duality.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_map>

#include "dynbsde/errors.hpp"
#include "dynbsde/io.hpp"

namespace dynbsde {

AxisGrid AxisGrid::spaced(double lo, double hi, double h) {
  if (!(h > 0) || !(hi >= lo)) throw ConfigError("axis: need hi >= lo and positive spacing");
  int count = static_cast<int>(std::lround((hi - lo) / h)) + 1;
  return {lo, hi, std::max(count, 1)};
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double minmod(double a, double b) {
  if (a * b <= 0.0) return 0.0;
  return std::fabs(a) < std::fabs(b) ? a : b;
}

/// Locate v on an axis: cell index and weight, false outside.
bool locate(const AxisGrid& ax, double v, std::size_t& i, double& w) {
  if (ax.count == 1) {
    i = 0;
    w = 0.0;
    return true;
  }
  const double h = ax.step();
  const double s = (v - ax.lo) / h;
  const double tol = 1e-9;
  if (s < -tol || s > ax.count - 1 + tol) return false;
  double fl = std::floor(s);
  if (fl >= ax.count - 1) fl = ax.count - 2;
  if (fl < 0) fl = 0;
  i = static_cast<std::size_t>(fl);
  w = std::clamp(s - fl, 0.0, 1.0);
  return true;
}

void check_config(const BSDEProblem& problem, const HJBConfig& c) {
  const int dy = problem.value_dim;
  if (dy < 1 || dy > 2) throw ConfigError("HJB grid: value dimension must be 1 or 2");
  if (static_cast<int>(c.y.size()) != dy) throw ConfigError("HJB grid: need one y axis per value component");
  for (const auto& ax : c.y)
    if (ax.count < 3 || !(ax.hi > ax.lo)) throw ConfigError("HJB grid: each y axis needs >= 3 points and hi > lo");
  if (c.x.count == 2 || (c.x.count > 2 && !(c.x.hi > c.x.lo)))
    throw ConfigError("HJB grid: x axis needs 1 point (x-free problem) or >= 3 points");
  if (c.z_grid.empty()) throw ConfigError("HJB grid: z-grid is empty");
  bool has_zero = false;
  for (const auto& z : c.z_grid) {
    if (static_cast<int>(z.size()) != dy) throw ConfigError("HJB grid: z-grid entries must have d' components");
    bool zero = std::all_of(z.begin(), z.end(), [](double v) { return v == 0.0; });
    has_zero = has_zero || zero;
  }
  if (!has_zero) throw ConfigError("HJB grid: z-grid must contain 0");
  if (!(c.cfl > 0 && c.cfl <= 1)) throw ConfigError("HJB grid: cfl must lie in (0, 1]");
  if (c.epsilon < 0) throw ConfigError("HJB grid: epsilon must be positive");
  if (c.trusted_margin < 0 || c.trusted_margin >= 0.5) throw ConfigError("HJB grid: trusted margin must lie in [0, 0.5)");
}

double terminal_g(const BSDEProblem& problem, double x, double T, int n, std::span<double> out) {
  double xv[1] = {x};
  NodeContext ctx{nullptr, n, 0, T, std::span<const double>(xv, 1)};
  std::fill(out.begin(), out.end(), 0.0);
  problem.xi(ctx, out);
  return 0.0;
}

/// Explicit HJB operator with ghost cells from quadratic extrapolation.
class HjbOperator {
 public:
  HjbOperator(const HJBConfig& c, int dy) : c_(c), dy_(dy) {
    nx_ = c.x.count;
    n1_ = c.y[0].count;
    n2_ = dy == 2 ? c.y[1].count : 1;
    px_ = nx_ > 1 ? nx_ + 4 : 1;
    p1_ = n1_ + 4;
    p2_ = n2_ > 1 ? n2_ + 4 : 1;
    ox_ = nx_ > 1 ? 2 : 0;
    o2_ = n2_ > 1 ? 2 : 0;
    pad_.assign(px_ * p1_ * p2_, 0.0);
    hx_ = c.x.step();
    h_[0] = c.y[0].step();
    h_[1] = dy == 2 ? c.y[1].step() : 1.0;
  }

  std::size_t pidx(std::size_t a, std::size_t b, std::size_t cc) const { return (a * p1_ + b) * p2_ + cc; }

  void pad(const std::vector<double>& W) {
    for (std::size_t ix = 0; ix < nx_; ++ix)
      for (std::size_t i1 = 0; i1 < n1_; ++i1)
        for (std::size_t i2 = 0; i2 < n2_; ++i2)
          pad_[pidx(ix + ox_, i1 + 2, i2 + o2_)] = W[(ix * n1_ + i1) * n2_ + i2];
    auto extrap = [&](std::size_t base, std::size_t stride, std::size_t first, std::size_t count) {
      auto at = [&](std::size_t k) -> double& { return pad_[base + k * stride]; };
      double a0 = at(first), a1 = at(first + 1), a2 = at(first + 2);
      double g1 = 3 * a0 - 3 * a1 + a2;
      at(first - 1) = g1;
      at(first - 2) = 3 * g1 - 3 * a0 + a1;
      std::size_t last = first + count - 1;
      double b0 = at(last), b1 = at(last - 1), b2 = at(last - 2);
      double h1 = 3 * b0 - 3 * b1 + b2;
      at(last + 1) = h1;
      at(last + 2) = 3 * h1 - 3 * b0 + b1;
    };
    const std::size_t sx = p1_ * p2_, s1 = p2_;
    if (nx_ > 1)
      for (std::size_t i1 = 2; i1 < n1_ + 2; ++i1)
        for (std::size_t i2 = o2_; i2 < n2_ + o2_; ++i2) extrap(pidx(0, i1, i2), sx, 2, nx_);
    for (std::size_t ix = 0; ix < px_; ++ix)
      for (std::size_t i2 = o2_; i2 < n2_ + o2_; ++i2) extrap(pidx(ix, 0, i2), s1, 2, n1_);
    if (n2_ > 1)
      for (std::size_t ix = 0; ix < px_; ++ix)
        for (std::size_t i1 = 0; i1 < p1_; ++i1) extrap(pidx(ix, i1, 0), 1, 2, n2_);
  }

  /// out = min over (z, u) of the generator applied to W. vel holds -f per
  /// (point, z, u, component).
  void apply(const std::vector<double>& W, const std::vector<double>& vel, std::size_t nz, std::size_t nu,
             std::vector<double>& out) {
    pad(W);
    const std::size_t sx = p1_ * p2_, s1 = p2_, s2 = 1;
    const std::size_t stride[2] = {s1, s2};
    const auto& zg = c_.z_grid;
    for (std::size_t ix = 0; ix < nx_; ++ix) {
      for (std::size_t i1 = 0; i1 < n1_; ++i1) {
        for (std::size_t i2 = 0; i2 < n2_; ++i2) {
          const std::size_t P = pidx(ix + ox_, i1 + 2, i2 + o2_);
          const double* w = pad_.data();
          double dp[2] = {0, 0}, dm[2] = {0, 0}, dyy[2] = {0, 0}, dxy[2] = {0, 0};
          double dxx = 0.0, d12 = 0.0;
          for (int r = 0; r < dy_; ++r) {
            const std::size_t s = stride[r];
            const double h = h_[r];
            const double wm2 = w[P - 2 * s], wm1 = w[P - s], w0 = w[P], wp1 = w[P + s], wp2 = w[P + 2 * s];
            const double c_m = wm2 - 2 * wm1 + w0, c_0 = wm1 - 2 * w0 + wp1, c_p = w0 - 2 * wp1 + wp2;
            dm[r] = (w0 - wm1) / h + 0.5 * minmod(c_m, c_0) / h;
            dp[r] = (wp1 - w0) / h - 0.5 * minmod(c_0, c_p) / h;
            dyy[r] = c_0 / (h * h);
            if (nx_ > 1)
              dxy[r] = (w[P + sx + s] - w[P + sx - s] - w[P - sx + s] + w[P - sx - s]) / (4 * hx_ * h);
          }
          if (nx_ > 1) dxx = (w[P + sx] - 2 * w[P] + w[P - sx]) / (hx_ * hx_);
          if (dy_ == 2) d12 = (w[P + s1 + s2] - w[P + s1 - s2] - w[P - s1 + s2] + w[P - s1 - s2]) / (4 * h_[0] * h_[1]);
          const std::size_t p = (ix * n1_ + i1) * n2_ + i2;
          double best = kInf;
          for (std::size_t zi = 0; zi < nz; ++zi) {
            const auto& z = zg[zi];
            double diff = 0.5 * dxx;
            for (int r = 0; r < dy_; ++r) diff += z[r] * dxy[r] + 0.5 * z[r] * z[r] * dyy[r];
            if (dy_ == 2) diff += z[0] * z[1] * d12;
            for (std::size_t ui = 0; ui < nu; ++ui) {
              const double* v = &vel[((p * nz + zi) * nu + ui) * dy_];
              double val = diff;
              for (int r = 0; r < dy_; ++r) val += v[r] > 0 ? v[r] * dp[r] : v[r] * dm[r];
              best = std::min(best, val);
            }
          }
          out[p] = best;
        }
      }
    }
  }

 private:
  const HJBConfig& c_;
  int dy_;
  std::size_t nx_, n1_, n2_, px_, p1_, p2_, ox_, o2_;
  double hx_, h_[2];
  std::vector<double> pad_;
};

}  // namespace

bool DualGrid::has_level(int k) const { return std::find(levels.begin(), levels.end(), k) != levels.end(); }

const std::vector<double>& DualGrid::slice(int k) const {
  auto it = std::find(levels.begin(), levels.end(), k);
  if (it == levels.end()) throw DomainError("dual grid: level " + std::to_string(k) + " was not stored");
  return slices[it - levels.begin()];
}

std::vector<double> DualGrid::y_point(std::size_t i1, std::size_t i2) const {
  std::vector<double> y{config.y[0].at(static_cast<int>(i1))};
  if (value_dim == 2) y.push_back(config.y[1].at(static_cast<int>(i2)));
  return y;
}

double DualGrid::interpolate(int k, double x, std::span<const double> y) const {
  const auto& s = slice(k);
  std::size_t ix, i1, i2 = 0;
  double wx, w1, w2 = 0.0;
  if (!locate(config.x, x, ix, wx)) return kInf;
  if (!locate(config.y[0], y[0], i1, w1)) return kInf;
  if (value_dim == 2 && !locate(config.y[1], y[1], i2, w2)) return kInf;
  const int ex = nx > 1 ? 1 : 0, e2 = value_dim == 2 ? 1 : 0;
  double acc = 0.0;
  for (int a = 0; a <= ex; ++a)
    for (int b = 0; b <= 1; ++b)
      for (int c = 0; c <= e2; ++c) {
        double wt = (ex ? (a ? wx : 1 - wx) : 1.0) * (b ? w1 : 1 - w1) * (e2 ? (c ? w2 : 1 - w2) : 1.0);
        if (wt == 0.0) continue;
        acc += wt * s[index(ix + a, i1 + b, i2 + c)];
      }
  return acc;
}

bool DualGrid::trusted_x(std::size_t ix) const {
  if (nx <= 1) return true;
  double f = static_cast<double>(ix) / (nx - 1);
  return f >= config.trusted_margin - 1e-12 && f <= 1 - config.trusted_margin + 1e-12;
}

bool DualGrid::trusted_y(std::size_t i1, std::size_t i2) const {
  auto ok = [&](std::size_t i, std::size_t n) {
    double f = static_cast<double>(i) / (n - 1);
    return f >= config.trusted_margin - 1e-12 && f <= 1 - config.trusted_margin + 1e-12;
  };
  return ok(i1, n1) && (value_dim < 2 || ok(i2, n2));
}

double max_stable_dt(const HJBConfig& c, std::span<const double> vmax) {
  const int dy = static_cast<int>(c.y.size());
  double denom = 0.0;
  const double hx = c.x.step();
  for (int r = 0; r < dy; ++r) denom += vmax[r] / c.y[r].step();
  if (c.x.count > 1) denom += 1.0 / (hx * hx);
  double zmax = 0.0;
  for (const auto& z : c.z_grid) {
    double s = 0.0;
    for (int r = 0; r < dy; ++r) {
      double h = c.y[r].step();
      s += z[r] * z[r] / (h * h);
      if (c.x.count > 1) s += std::fabs(z[r]) / (hx * h);
    }
    if (dy == 2) s += std::fabs(z[0] * z[1]) / (c.y[0].step() * c.y[1].step());
    zmax = std::max(zmax, s);
  }
  denom += zmax;
  return denom > 0 ? c.cfl / denom : kInf;
}

double terminal_interpolation_error(const BSDEProblem& problem, const HJBConfig& c, double T) {
  const int dy = problem.value_dim;
  std::vector<double> g(dy), yc(dy);
  double err = 0.0;
  const int n2 = dy == 2 ? c.y[1].count : 1;
  for (int ix = 0; ix < c.x.count; ++ix) {
    terminal_g(problem, c.x.at(ix), T, 0, g);
    auto W = [&](std::span<const double> y) {
      double s = 0.0;
      for (int r = 0; r < dy; ++r) s += (y[r] - g[r]) * (y[r] - g[r]);
      return s;
    };
    for (int i1 = 0; i1 + 1 < c.y[0].count; ++i1) {
      for (int i2 = 0; i2 + 1 < std::max(n2, 2); ++i2) {
        if (dy == 1 && i2 > 0) break;
        yc[0] = 0.5 * (c.y[0].at(i1) + c.y[0].at(i1 + 1));
        if (dy == 2) yc[1] = 0.5 * (c.y[1].at(i2) + c.y[1].at(i2 + 1));
        double avg = 0.0;
        int cnt = 0;
        for (int a = 0; a <= 1; ++a)
          for (int b = 0; b <= (dy == 2 ? 1 : 0); ++b) {
            std::vector<double> corner{c.y[0].at(i1 + a)};
            if (dy == 2) corner.push_back(c.y[1].at(i2 + b));
            avg += W(corner);
            ++cnt;
          }
        err = std::max(err, std::fabs(avg / cnt - W(yc)));
      }
    }
  }
  return err;
}

DualGrid solve_dual_hjb(const BSDEProblem& problem, const TimeGrid& time, const HJBConfig& config) {
  if (!problem.markovian || problem.path_dependent)
    throw DomainError("solve_dual_hjb: problem must be Markovian (f = f(t,x,y,z,u), xi = g(B_T))");
  check_config(problem, config);
  DualGrid G;
  G.config = config;
  G.time = time;
  G.value_dim = problem.value_dim;
  G.nx = config.x.count;
  G.n1 = config.y[0].count;
  G.n2 = problem.value_dim == 2 ? config.y[1].count : 1;
  const int dy = problem.value_dim, n = time.n;
  const std::size_t N = G.points();
  G.interp_error = terminal_interpolation_error(problem, config, time.T);
  G.epsilon = config.epsilon > 0 ? config.epsilon : config.epsilon_factor * G.interp_error;
  if (!(G.epsilon > 0)) G.epsilon = 1e-12;

  auto keep = [&](int k) {
    return config.keep_levels.empty() ||
           std::find(config.keep_levels.begin(), config.keep_levels.end(), k) != config.keep_levels.end();
  };

  std::vector<double> W(N), g(dy);
  for (std::size_t ix = 0; ix < G.nx; ++ix) {
    terminal_g(problem, G.x_point(ix), time.T, n, g);
    for (std::size_t i1 = 0; i1 < G.n1; ++i1)
      for (std::size_t i2 = 0; i2 < G.n2; ++i2) {
        auto y = G.y_point(i1, i2);
        double s = 0.0;
        for (int r = 0; r < dy; ++r) s += (y[r] - g[r]) * (y[r] - g[r]);
        W[G.index(ix, i1, i2)] = s;
      }
  }
  if (keep(n)) {
    G.levels.push_back(n);
    G.slices.push_back(W);
  }

  const std::size_t nz = config.z_grid.size(), nu = problem.controls.size();
  std::vector<double> vel(N * nz * nu * dy), L1(N), W1(N), out(dy);
  HjbOperator op(config, dy);
  for (int k = n - 1; k >= 0; --k) {
    const double t = time.time(k);
    std::vector<double> vmax(dy, 0.0);
    for (std::size_t ix = 0; ix < G.nx; ++ix) {
      double xv[1] = {G.x_point(ix)};
      NodeContext ctx{nullptr, k, 0, t, std::span<const double>(xv, 1)};
      for (std::size_t i1 = 0; i1 < G.n1; ++i1)
        for (std::size_t i2 = 0; i2 < G.n2; ++i2) {
          auto y = G.y_point(i1, i2);
          const std::size_t p = G.index(ix, i1, i2);
          for (std::size_t zi = 0; zi < nz; ++zi)
            for (std::size_t ui = 0; ui < nu; ++ui) {
              std::fill(out.begin(), out.end(), 0.0);
              problem.f(ctx, y, config.z_grid[zi], problem.controls[ui], out);
              double* v = &vel[((p * nz + zi) * nu + ui) * dy];
              for (int r = 0; r < dy; ++r) {
                v[r] = -out[r];
                vmax[r] = std::max(vmax[r], std::fabs(out[r]));
              }
            }
        }
    }
    const double dt_max = max_stable_dt(config, vmax);
    const double dt_tree = time.dt();
    int sub;
    if (config.substeps > 0) {
      sub = config.substeps;
      if (dt_tree / sub > dt_max * (1 + 1e-12)) {
        std::ostringstream os;
        os << "HJB CFL violated at level " << k << ": step " << dt_tree / sub << " exceeds the max stable dt "
           << dt_max << " (need >= " << static_cast<int>(std::ceil(dt_tree / dt_max)) << " substeps)";
        throw ConfigError(os.str());
      }
    } else {
      sub = std::max(1, static_cast<int>(std::ceil(dt_tree / dt_max - 1e-12)));
    }
    G.substeps = std::max(G.substeps, sub);
    const double h = dt_tree / sub;
    G.pde_dt = h;
    for (int s = 0; s < sub; ++s) {
      // Heun: W1 = W + h L(W); W <- (W + W1 + h L(W1)) / 2
      op.apply(W, vel, nz, nu, L1);
      for (std::size_t p = 0; p < N; ++p) W1[p] = W[p] + h * L1[p];
      op.apply(W1, vel, nz, nu, L1);
      for (std::size_t p = 0; p < N; ++p) W[p] = std::max(0.0, 0.5 * (W[p] + W1[p] + h * L1[p]));
    }
    if (keep(k)) {
      G.levels.push_back(k);
      G.slices.push_back(W);
    }
  }
  return G;
}

NodalSet extract_nodal_set(const DualGrid& grid, int level, std::size_t x_index, double epsilon) {
  if (x_index >= grid.nx) throw DomainError("nodal set: x index outside the grid");
  const auto& s = grid.slice(level);
  NodalSet ns;
  ns.level = level;
  ns.x_index = x_index;
  ns.epsilon = epsilon;
  for (std::size_t i1 = 0; i1 < grid.n1; ++i1)
    for (std::size_t i2 = 0; i2 < grid.n2; ++i2) {
      const std::size_t p = grid.index(x_index, i1, i2);
      if (s[p] <= epsilon) {
        ns.points.push_back(grid.y_point(i1, i2));
        ns.flat_indices.push_back(p);
        if (!grid.trusted_y(i1, i2) || !grid.trusted_x(x_index)) ++ns.untrusted;
      }
    }
  ns.empty_flag = ns.points.empty();
  return ns;
}

DualStaticValue dual_static_value(const NodalSet& nodal, const Utility& phi, const PointSet* reachable,
                                  std::span<const double> cell) {
  if (nodal.points.empty())
    throw EmptySetError("nodal set is empty: epsilon is below the scheme error, increase it");
  DualStaticValue r;
  std::size_t best = 0;
  r.value = phi(nodal.points[0]);
  for (std::size_t i = 1; i < nodal.points.size(); ++i) {
    double v = phi(nodal.points[i]);
    if (v > r.value) {
      r.value = v;
      best = i;
    }
  }
  r.argmax = nodal.points[best];
  if (reachable) {
    bool near = false;
    for (const auto& q : *reachable) {
      bool ok = true;
      for (std::size_t j = 0; j < q.size() && ok; ++j) {
        double c = j < cell.size() ? cell[j] : 0.0;
        ok = std::fabs(q[j] - r.argmax[j]) <= c + 1e-12;
      }
      if (ok) {
        near = true;
        break;
      }
    }
    r.argmax_near_reachable = near;
  }
  return r;
}

namespace {

/// Uniform bucket index for nearest-neighbour queries in 1 or 2 dimensions.
class BucketIndex {
 public:
  explicit BucketIndex(const PointSet& pts) : pts_(pts) {
    dim_ = pts.empty() ? 1 : static_cast<int>(pts[0].size());
    lo_.assign(dim_, kInf);
    std::vector<double> hi(dim_, -kInf);
    for (const auto& p : pts)
      for (int j = 0; j < dim_; ++j) {
        lo_[j] = std::min(lo_[j], p[j]);
        hi[j] = std::max(hi[j], p[j]);
      }
    double ext = 0.0;
    for (int j = 0; j < dim_; ++j) ext = std::max(ext, hi[j] - lo_[j]);
    ext = std::max(ext, 1e-12);
    // cell size from the occupied volume over non-degenerate axes only
    double vol = 1.0;
    int live = 0;
    for (int j = 0; j < dim_; ++j)
      if (hi[j] - lo_[j] > ext * 1e-9) {
        vol *= hi[j] - lo_[j];
        ++live;
      }
    const double per = live ? std::pow(vol / std::max<std::size_t>(pts.size(), 1), 1.0 / live) : ext;
    h_ = std::clamp(per * 2.0, ext / 4096, ext + 1e-12);
    hi_cell_.resize(dim_);
    for (int j = 0; j < dim_; ++j) hi_cell_[j] = static_cast<long long>(std::floor((hi[j] - lo_[j]) / h_));
    span_ = static_cast<long long>(std::ceil(ext / h_)) + 2;
    for (std::size_t i = 0; i < pts.size(); ++i) cells_[key(cell_of(pts[i]))].push_back(i);
  }

  double nearest(const std::vector<double>& q) const {
    double best = kInf;
    if (pts_.size() <= 64) {
      for (const auto& p : pts_) best = std::min(best, dist(q, p));
      return best;
    }
    auto c = cell_of(q);
    // first ring that can touch the occupied box
    long long r0 = 0;
    for (int j = 0; j < dim_; ++j) r0 = std::max({r0, -c[j], c[j] - hi_cell_[j]});
    std::size_t visited = 0;
    for (long long r = r0;; ++r) {
      // far queries: a linear scan is cheaper than walking empty rings
      visited += dim_ == 1 ? 2 : static_cast<std::size_t>(8 * r + 1);
      if (visited > 4 * cells_.size() + 64) {
        for (const auto& p : pts_) best = std::min(best, dist(q, p));
        return best;
      }
      visit_ring(c, r, [&](const std::vector<long long>& cc) {
        auto it = cells_.find(key(cc));
        if (it == cells_.end()) return;
        for (std::size_t i : it->second) best = std::min(best, dist(q, pts_[i]));
      });
      if (best <= r * h_) break;
      if (r > span_ + 2 * max_offset(c)) break;
    }
    return best;
  }

 private:
  static double dist(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) s += (a[j] - b[j]) * (a[j] - b[j]);
    return std::sqrt(s);
  }
  std::vector<long long> cell_of(const std::vector<double>& p) const {
    std::vector<long long> c(dim_);
    for (int j = 0; j < dim_; ++j) c[j] = static_cast<long long>(std::floor((p[j] - lo_[j]) / h_));
    return c;
  }
  long long max_offset(const std::vector<long long>& c) const {
    long long m = 0;
    for (auto v : c) m = std::max(m, std::llabs(v));
    return m;
  }
  static long long key(const std::vector<long long>& c) {
    long long k = 0;
    for (auto v : c) k = k * 2000003LL + (v + 1000000LL);
    return k;
  }
  template <class F>
  void visit_ring(const std::vector<long long>& c, long long r, F&& f) const {
    if (dim_ == 1) {
      f(std::vector<long long>{c[0] - r});
      if (r) f(std::vector<long long>{c[0] + r});
      return;
    }
    if (r == 0) {
      f(c);
      return;
    }
    for (long long a = -r; a <= r; ++a) {
      f(std::vector<long long>{c[0] + a, c[1] - r});
      f(std::vector<long long>{c[0] + a, c[1] + r});
    }
    for (long long b = -r + 1; b <= r - 1; ++b) {
      f(std::vector<long long>{c[0] - r, c[1] + b});
      f(std::vector<long long>{c[0] + r, c[1] + b});
    }
  }

  const PointSet& pts_;
  int dim_;
  std::vector<double> lo_;
  std::vector<long long> hi_cell_;
  double h_;
  long long span_;
  std::unordered_map<long long, std::vector<std::size_t>> cells_;
};

}  // namespace

double directed_distance(const PointSet& a, const PointSet& b) {
  if (a.empty()) return 0.0;
  if (b.empty()) return kInf;
  if (a[0].size() > 2) throw DomainError("distance: point dimension above 2");
  BucketIndex idx(b);
  double m = 0.0;
  for (const auto& p : a) m = std::max(m, idx.nearest(p));
  return m;
}

double hausdorff_distance(const PointSet& a, const PointSet& b) {
  return std::max(directed_distance(a, b), directed_distance(b, a));
}

namespace {

/// Forward expansion of X from one node over M steps with (z, u) slots.
class ForwardExpansion {
 public:
  ForwardExpansion(const BSDEProblem& problem, const std::vector<std::vector<double>>& z_grid, int d, double dt,
                   double t0_level_time, int k, int M, std::span<const double> b0, const ScenarioTree* tree,
                   std::size_t node)
      : problem_(problem), zg_(z_grid), d_(d), dt_(dt), sdt_(std::sqrt(dt)), k_(k), M_(M), tree_(tree),
        node_(node), dy_(problem.value_dim) {
    (void)t0_level_time;
    X_.resize(M + 1);
    Bv_.resize(M + 1);
    for (int j = 0; j <= M; ++j) {
      std::size_t cnt = std::size_t{1} << (d * j);
      X_[j].assign(cnt * dy_, 0.0);
      Bv_[j].assign(cnt * d, 0.0);
    }
    std::copy(b0.begin(), b0.end(), Bv_[0].begin());
    for (int j = 0; j < M; ++j) {
      std::size_t cnt = std::size_t{1} << (d * j);
      for (std::size_t i = 0; i < cnt; ++i)
        for (int c = 0; c < (1 << d); ++c) {
          std::size_t ch = (i << d) | static_cast<std::size_t>(c);
          for (int q = 0; q < d; ++q)
            Bv_[j + 1][ch * d + q] = Bv_[j][i * d + q] + (((c >> (d - 1 - q)) & 1) ? sdt_ : -sdt_);
        }
    }
    if (problem.policy_space == PolicySpace::LevelWise) {
      for (int j = 0; j < M; ++j) slots_.push_back({j, 0, std::size_t{1} << (d * j)});
    } else {
      for (int j = 0; j < M; ++j)
        for (std::size_t i = 0; i < (std::size_t{1} << (d * j)); ++i) slots_.push_back({j, i, 1});
    }
    choice_.assign(slots_.size(), 0);
    zdim_ = z_grid.empty() ? 0 : z_grid[0].size();
    fout_.resize(dy_);
  }

  std::size_t slots() const { return slots_.size(); }
  std::size_t choices() const { return zg_.size() * problem_.controls.size(); }
  double log10_count() const { return slots_.size() * std::log10(static_cast<double>(choices())); }
  const std::vector<std::uint32_t>& choice() const { return choice_; }
  const std::vector<double>& leaves() const { return X_[M_]; }
  const std::vector<double>& leaf_b() const { return Bv_[M_]; }
  int dy() const { return dy_; }

  void start(std::span<const double> y) {
    std::copy(y.begin(), y.end(), X_[0].begin());
    std::fill(choice_.begin(), choice_.end(), 0);
    for (std::size_t p = 0; p < slots_.size(); ++p) compute(p);
  }

  bool advance() {
    const std::size_t U = choices();
    for (std::size_t p = slots_.size(); p-- > 0;) {
      if (choice_[p] + 1 < U) {
        ++choice_[p];
        for (std::size_t q = p; q < slots_.size(); ++q) compute(q);
        return true;
      }
      choice_[p] = 0;
    }
    return false;
  }

  NodeContext context(int j, std::size_t i) const {
    if (tree_) {
      std::size_t idx = (node_ << (d_ * j)) | i;
      return {tree_, k_ + j, idx, tree_->grid().time(k_ + j), tree_->value(k_ + j, idx)};
    }
    return {nullptr, k_ + j, 0, (k_ + j) * dt_, std::span<const double>(Bv_[j].data() + i * d_, d_)};
  }

 private:
  struct Slot {
    int level;
    std::size_t first, count;
  };
  void compute(std::size_t p) {
    const auto& s = slots_[p];
    const std::size_t nu = problem_.controls.size();
    const std::uint32_t c = choice_[p];
    const auto& z = zg_[c / nu];
    const auto& u = problem_.controls[c % nu];
    for (std::size_t i = s.first; i < s.first + s.count; ++i) {
      std::span<const double> x(X_[s.level].data() + i * dy_, dy_);
      std::fill(fout_.begin(), fout_.end(), 0.0);
      problem_.f(context(s.level, i), x, z, u, fout_);
      for (int ch = 0; ch < (1 << d_); ++ch) {
        std::size_t cidx = (i << d_) | static_cast<std::size_t>(ch);
        double* xc = X_[s.level + 1].data() + cidx * dy_;
        for (int r = 0; r < dy_; ++r) {
          double v = x[r] - fout_[r] * dt_;
          for (int q = 0; q < d_; ++q) v += z[r * d_ + q] * (((ch >> (d_ - 1 - q)) & 1) ? sdt_ : -sdt_);
          xc[r] = v;
        }
      }
    }
  }

  const BSDEProblem& problem_;
  const std::vector<std::vector<double>>& zg_;
  int d_;
  double dt_, sdt_;
  int k_, M_;
  const ScenarioTree* tree_;
  std::size_t node_;
  int dy_;
  std::size_t zdim_ = 0;
  std::vector<std::vector<double>> X_, Bv_;
  std::vector<Slot> slots_;
  std::vector<std::uint32_t> choice_;
  std::vector<double> fout_;
};

void check_z_grid(const std::vector<std::vector<double>>& zg, int dy, int d) {
  if (zg.empty()) throw DomainError("z-grid is empty");
  for (const auto& z : zg)
    if (static_cast<int>(z.size()) != dy * d) throw DomainError("z-grid entries must be d' x d matrices");
}

}  // namespace

DualDirectResult dual_value_direct(const BSDEProblem& problem, const ScenarioTree& tree, int k, std::size_t node,
                                   std::span<const double> y, const std::vector<std::vector<double>>& z_grid,
                                   const EnumerationOptions& opts) {
  if (tree.mode() != TreeMode::Path) throw ModeError("dual_value_direct: X is path dependent, use a path-mode tree");
  if (k < 0 || k > tree.steps() || node >= tree.level_size(k)) throw DomainError("dual_value_direct: node outside tree");
  if (static_cast<int>(y.size()) != problem.value_dim) throw DomainError("dual_value_direct: y has the wrong size");
  check_z_grid(z_grid, problem.value_dim, tree.dim());
  const int n = tree.steps(), M = n - k, dy = problem.value_dim, d = tree.dim();
  ForwardExpansion fx(problem, z_grid, d, tree.grid().dt(), tree.grid().time(k), k, M, tree.value(k, node), &tree, node);
  if (fx.slots() > 0 && fx.choices() > 1 && fx.log10_count() > std::log10(static_cast<double>(opts.cap)) + 1e-12) {
    std::ostringstream os;
    os << "dual_value_direct needs 10^" << fx.log10_count() << " policies, above the cap " << opts.cap;
    throw SizeError(os.str());
  }
  // terminal values on the subtree leaves
  const std::size_t leaves = std::size_t{1} << (d * M);
  std::vector<double> xi(leaves * dy);
  for (std::size_t i = 0; i < leaves; ++i) {
    std::size_t idx = (node << (d * M)) | i;
    NodeContext ctx{&tree, n, idx, tree.grid().T, tree.value(n, idx)};
    problem.xi(ctx, std::span<double>(xi.data() + i * dy, dy));
  }
  DualDirectResult res;
  fx.start(y);
  do {
    const auto& X = fx.leaves();
    double s = 0.0;
    for (std::size_t i = 0; i < leaves; ++i) {
      double e = 0.0;
      for (int r = 0; r < dy; ++r) {
        double v = X[i * dy + r] - xi[i * dy + r];
        e += v * v;
      }
      s += e;
    }
    s /= static_cast<double>(leaves);
    ++res.evaluated;
    // canonical order is parent-first, so the first strict minimum is the lex-smallest
    if (res.best.empty() || s < res.value - opts.tie_tol * std::max(1.0, std::fabs(res.value))) {
      res.value = s;
      res.best = fx.choice();
    }
  } while (fx.advance());
  return res;
}

ConditionalDualValue conditional_dual_value(const BSDEProblem& problem, const ScenarioTree& tree, int k,
                                            std::size_t node, const PointSet& points,
                                            const std::vector<std::vector<double>>& z_grid,
                                            const EnumerationOptions& opts) {
  ConditionalDualValue c;
  c.level = k;
  c.node = node;
  c.points = points;
  for (const auto& y : points) c.values.push_back(dual_value_direct(problem, tree, k, node, y, z_grid, opts).value);
  return c;
}

GeometricDppReport check_geometric_dpp(const BSDEProblem& problem, const ScenarioTree& tree, const DualGrid& grid,
                                       double epsilon, int k1, int k2, double scheme_slack,
                                       const EnumerationOptions& opts) {
  if (tree.dim() != 1) throw DomainError("geometric DPP: grids support d = 1 only");
  if (tree.steps() != grid.time.n || std::fabs(tree.grid().T - grid.time.T) > 1e-12)
    throw DomainError("geometric DPP: tree and grid time steps differ");
  if (!(0 <= k1 && k1 <= k2 && k2 <= tree.steps())) throw DomainError("geometric DPP: need 0 <= k1 <= k2 <= n");
  GeometricDppReport rep;
  rep.k1 = k1;
  rep.k2 = k2;
  rep.epsilon = epsilon;
  rep.scheme_slack = scheme_slack >= 0 ? scheme_slack : epsilon;
  const int M = k2 - k1, dy = problem.value_dim;
  const auto& zg = grid.config.z_grid;
  for (std::size_t node = 0; node < tree.level_size(k1); ++node) {
    const double x = tree.value(k1, node)[0];
    double xb[1] = {x};
    ForwardExpansion fx(problem, zg, 1, tree.grid().dt(), tree.grid().time(k1), k1, M, std::span<const double>(xb, 1),
                        nullptr, 0);
    if (fx.slots() > 0 && fx.choices() > 1 && fx.log10_count() > std::log10(static_cast<double>(opts.cap)) + 1e-12)
      throw SizeError("geometric DPP: steering enumeration above the cap");
    for (std::size_t i1 = 0; i1 < grid.n1; ++i1)
      for (std::size_t i2 = 0; i2 < grid.n2; ++i2) {
        if (!grid.trusted_y(i1, i2)) continue;
        auto y = grid.y_point(i1, i2);
        const double w1 = grid.interpolate(k1, x, y);
        double g = kInf;
        fx.start(y);
        do {
          const auto& X = fx.leaves();
          const auto& B = fx.leaf_b();
          const std::size_t L = B.size();
          double worst = 0.0;
          for (std::size_t l = 0; l < L && worst < g; ++l)
            worst = std::max(worst, grid.interpolate(k2, B[l], std::span<const double>(X.data() + l * dy, dy)));
          g = std::min(g, worst);
        } while (fx.advance());
        if (w1 <= epsilon) {
          ++rep.nodal_points;
          if (!std::isfinite(g)) {
            ++rep.unsteerable;
          } else {
            rep.rho = std::max(rep.rho, g);
          }
        }
        if (g <= epsilon) {
          ++rep.steerable_points;
          rep.slack_b = std::max(rep.slack_b, w1 - epsilon);
        }
      }
  }
  rep.inclusion_a = rep.unsteerable == 0 && rep.nodal_points > 0;
  rep.inclusion_b = rep.slack_b <= rep.scheme_slack;
  return rep;
}

RegularityReport check_w_regularity(const DualGrid& grid, int level, std::size_t x_index) {
  const auto& s = grid.slice(level);
  std::vector<std::vector<double>> ys;
  std::vector<double> ws;
  for (std::size_t i1 = 0; i1 < grid.n1; ++i1)
    for (std::size_t i2 = 0; i2 < grid.n2; ++i2) {
      ys.push_back(grid.y_point(i1, i2));
      ws.push_back(s[grid.index(x_index, i1, i2)]);
    }
  auto nrm = [](const std::vector<double>& v) {
    double q = 0.0;
    for (double a : v) q += a * a;
    return std::sqrt(q);
  };
  RegularityReport r;
  auto pair = [&](std::size_t a, std::size_t b) {
    double d = 0.0;
    for (std::size_t j = 0; j < ys[a].size(); ++j) d += (ys[a][j] - ys[b][j]) * (ys[a][j] - ys[b][j]);
    d = std::sqrt(d);
    if (d == 0.0) return;
    double c = std::fabs(ws[a] - ws[b]) / ((1 + nrm(ys[a]) + nrm(ys[b])) * d);
    r.c_hat = std::max(r.c_hat, c);
    ++r.pairs;
  };
  const std::size_t N = ys.size();
  if (N <= 4096) {
    for (std::size_t a = 0; a < N; ++a)
      for (std::size_t b = a + 1; b < N; ++b) pair(a, b);
  } else {
    // grid-line pairs only: every pair on the same y1 line and on the same y2 line
    for (std::size_t i1 = 0; i1 < grid.n1; ++i1)
      for (std::size_t a = 0; a < grid.n2; ++a)
        for (std::size_t b = a + 1; b < grid.n2; ++b) pair(i1 * grid.n2 + a, i1 * grid.n2 + b);
    for (std::size_t i2 = 0; i2 < grid.n2; ++i2)
      for (std::size_t a = 0; a < grid.n1; ++a)
        for (std::size_t b = a + 1; b < grid.n1; ++b) pair(a * grid.n2 + i2, b * grid.n2 + i2);
  }
  return r;
}

void write_dual_grid_csv(std::ostream& os, const DualGrid& grid) {
  std::vector<std::string> hdr{"t", "x"};
  if (grid.value_dim == 1) {
    hdr.push_back("y");
  } else {
    hdr.push_back("y1");
    hdr.push_back("y2");
  }
  hdr.push_back("W");
  CsvWriter w(os, hdr);
  std::vector<int> lv = grid.levels;
  std::sort(lv.begin(), lv.end());
  for (int k : lv) {
    const auto& s = grid.slice(k);
    for (std::size_t ix = 0; ix < grid.nx; ++ix)
      for (std::size_t i1 = 0; i1 < grid.n1; ++i1)
        for (std::size_t i2 = 0; i2 < grid.n2; ++i2) {
          std::vector<double> row{grid.time.time(k), grid.x_point(ix)};
          auto y = grid.y_point(i1, i2);
          row.insert(row.end(), y.begin(), y.end());
          row.push_back(s[grid.index(ix, i1, i2)]);
          w.row(row);
        }
  }
}

void write_nodal_set_csv(std::ostream& os, const DualGrid& grid, const NodalSet& set) {
  std::vector<std::string> hdr{"t", "x"};
  if (grid.value_dim == 1) {
    hdr.push_back("y");
  } else {
    hdr.push_back("y1");
    hdr.push_back("y2");
  }
  CsvWriter w(os, hdr);
  for (const auto& y : set.points) {
    std::vector<double> row{grid.time.time(set.level), grid.x_point(set.x_index)};
    row.insert(row.end(), y.begin(), y.end());
    w.row(row);
  }
}

}  // namespace dynbsde
