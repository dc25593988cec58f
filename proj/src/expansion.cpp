#include "cuolab/expansion.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>

namespace cuolab {

Jet LambdaLinear::to_jet(int K) const {
  Jet j(c0, K);
  j.at(1, 0) = lp;
  j.at(2, 0) = lm;
  return j;
}

LambdaLinear InteractionKernel::operator()(int x1, int x2, int y1, int y2) const {
  auto it = entries.find({x1, x2, y1, y2});
  return it == entries.end() ? LambdaLinear{} : it->second;
}

InteractionKernel build_interaction_kernel(const ModelParams& p, const ExternalIndices& ext) {
  InteractionKernel k;
  k.L = p.L;
  const int L = p.L;
  auto idx = [&](const Mode& m) { return mode_index(L, m); };
  auto add = [&](const Mode& a, const Mode& b, const Mode& c, const Mode& d, LambdaLinear v) {
    k.entries[{idx(a), idx(b), idx(c), idx(d)}] += v;
  };
  const Spin up = Spin::Up, dn = Spin::Down;
  for (int orb = 0; orb < 3; ++orb) {
    const cplx u = p.coupling(orb) / 4.0;
    if (u == 0.0) continue;
    for (int x1 = 0; x1 < L; ++x1)
      for (int x2 = 0; x2 < L; ++x2) {
        auto m = [&](Spin s) { return Mode{orb, x1, x2, s}; };
        // sigma factor: +1 for (up, dn); tau factor: +1 for (dn, up)
        add(m(up), m(dn), m(dn), m(up), {u});
        add(m(up), m(dn), m(up), m(dn), {-u});
        add(m(dn), m(up), m(dn), m(up), {-u});
        add(m(dn), m(up), m(up), m(dn), {u});
      }
  }
  auto norm = [&](Mode m) {
    m.x1 = wrap(m.x1, L);
    m.x2 = wrap(m.x2, L);
    return m;
  };
  const Mode X1 = norm(ext.X1), X2 = norm(ext.X2), Y1 = norm(ext.Y1), Y2 = norm(ext.Y2);
  const cplx q = 0.25;
  add(X1, X2, Y2, Y1, {0.0, q, 0.0});
  add(X1, X2, Y1, Y2, {0.0, -q, 0.0});
  add(X2, X1, Y2, Y1, {0.0, -q, 0.0});
  add(X2, X1, Y1, Y2, {0.0, q, 0.0});
  add(Y1, Y2, X2, X1, {0.0, 0.0, q});
  add(Y1, Y2, X1, X2, {0.0, 0.0, -q});
  add(Y2, Y1, X2, X1, {0.0, 0.0, -q});
  add(Y2, Y1, X1, X2, {0.0, 0.0, q});
  std::erase_if(k.entries, [](const auto& e) { return e.second.is_zero(); });
  return k;
}

SpacePtr full_space(const ModelParams& p, int replicas) {
  std::vector<FieldIndex> f;
  for (int i = 0; i < num_fields(p); ++i) f.push_back(field_from_index(p, i));
  return make_space(std::move(f), replicas);
}

namespace {

// Adds one time slice of V, with field positions given by pos(mode).
template <class T, class Coef>
void add_slice(GrassmannPoly<T>& v, const InteractionKernel& k, double h, const std::function<int(int)>& pos,
               Coef coef) {
  const auto& s = *v.space();
  for (const auto& [key, u] : k.entries) {
    const std::vector<int> ids{s.id(0, true, pos(key[0])), s.id(0, true, pos(key[1])), s.id(0, false, pos(key[2])),
                               s.id(0, false, pos(key[3]))};
    v += GrassmannPoly<T>::monomial(v.space(), ids, coef(u) * cplx(-1.0 / h));
  }
}

Eigen::MatrixXcd cov_dense(const CovarianceMatrix& C, const GeneratorSpace& s) { return restrict_covariance(C, s); }

// V0 term c psibar_i psibar_j psi_i psi_j = -c (psibar_i psi_i)(psibar_j psi_j) = a^2 (...)(...) with a^2 = -c.
struct DensityPair {
  int i = 0;
  int j = 0;
  cplx a{0.0};
};

std::vector<DensityPair> density_pairs(const Poly& v0) {
  const auto& s = *v0.space();
  std::vector<DensityPair> out;
  for (const auto& [m, c] : v0.terms()) {
    if (c == 0.0) continue;
    const Mask bars = m & s.bar_mask(0), unbars = m & s.unbar_mask(0);
    if (popcount(bars) != 2 || popcount(unbars) != 2 || (unbars >> s.n()) != bars)
      throw std::logic_error("interaction is not of density-density form");
    const int i = lowest_bit(bars), j = lowest_bit(bars & (bars - 1));
    out.push_back({i, j, std::sqrt(-c)});
  }
  std::sort(out.begin(), out.end(), [](const DensityPair& a, const DensityPair& b) {
    return std::tie(a.i, a.j) < std::tie(b.i, b.j);
  });
  return out;
}

// Lambda parts of V as (mask, dP+ weight, dP- weight).
struct LambdaTerm {
  Mask m = 0;
  cplx lp{0.0};
  cplx lm{0.0};
};
std::vector<LambdaTerm> lambda_terms(const JetPoly& v) {
  std::vector<LambdaTerm> out;
  for (const auto& [m, c] : v.terms())
    if (c.lambda_coeff(1) != 0.0 || c.lambda_coeff(-1) != 0.0) out.push_back({m, c.lambda_coeff(1), c.lambda_coeff(-1)});
  std::sort(out.begin(), out.end(), [](const LambdaTerm& a, const LambdaTerm& b) { return a.m < b.m; });
  return out;
}

Poly lambda_free(const JetPoly& v) { return jet_component(v, 0, 0); }

std::vector<int> bits_of(Mask m) {
  std::vector<int> out;
  while (m) {
    const int b = lowest_bit(m);
    out.push_back(b);
    m &= m - 1;
  }
  return out;
}

}  // namespace

JetPoly build_v(const ModelParams& p, const InteractionKernel& k, const SpacePtr& space, int K) {
  JetPoly v(space);
  for (int t = 0; t < p.n_time; ++t) {
    auto pos = [&](int mode) {
      const Mode m = mode_from_index(p.L, mode);
      return space->position({m.orb, m.x1, m.x2, m.spin, t});
    };
    add_slice<Jet>(v, k, p.h, pos, [&](const LambdaLinear& u) { return u.to_jet(K); });
  }
  return v;
}

Poly build_v0(const ModelParams& p, const InteractionKernel& k, const SpacePtr& space) {
  return lambda_free(build_v(p, k, space));
}

// ---------------------------------------------------------------- engine

PartitionValue partition_engine(const ModelParams& p, const ExternalIndices& ext, const CovarianceMatrix& C,
                                EngineLimits lim) {
  if (num_fields(p) > lim.max_fields) {
    std::ostringstream os;
    os << "partition_engine: " << num_fields(p) << " fields exceed the engine cap " << lim.max_fields;
    throw std::length_error(os.str());
  }
  auto s = full_space(p);
  const JetPoly v = build_v(p, build_interaction_kernel(p, ext), s);
  const Jet r = gaussian_integral(exp_poly(v), cov_dense(C, *s), 0).constant_term();
  PartitionValue out;
  out.P = r.scalar();
  out.dP_plus = r.lambda_coeff(1);
  out.dP_minus = r.lambda_coeff(-1);
  out.terms = static_cast<long long>(v.size());
  out.evaluator = "engine";
  return out;
}

// ---------------------------------------------------------------- vertex series

std::vector<SeriesVertex> series_vertices(const ModelParams& p, const ExternalIndices& ext) {
  const InteractionKernel k = build_interaction_kernel(p, ext);
  // (slice, X_a < X_b, Y_a < Y_b) -> (1/h) sum U(E) eps_E
  std::map<std::array<int, 5>, LambdaLinear> acc;
  for (int t = 0; t < p.n_time; ++t)
    for (const auto& [key, u] : k.entries) {
      auto fi = [&](int mode) {
        const Mode m = mode_from_index(p.L, mode);
        return field_index(p, {m.orb, m.x1, m.x2, m.spin, t});
      };
      int x1 = fi(key[0]), x2 = fi(key[1]), y1 = fi(key[2]), y2 = fi(key[3]);
      if (x1 == x2 || y1 == y2) continue;
      double sgn = 1.0;
      if (x1 > x2) std::swap(x1, x2), sgn = -sgn;
      if (y1 > y2) std::swap(y1, y2), sgn = -sgn;
      const cplx f = sgn / p.h;
      acc[{t, x1, x2, y1, y2}] += LambdaLinear{u.c0 * f, u.lp * f, u.lm * f};
    }
  std::vector<SeriesVertex> vu, vl;
  for (const auto& [key, w] : acc) {
    if (w.is_zero()) continue;
    SeriesVertex v{{key[1], key[2]}, {key[3], key[4]}, w};
    (w.c0 != 0.0 ? vu : vl).push_back(v);
  }
  vu.insert(vu.end(), vl.begin(), vl.end());
  return vu;
}

PartitionValue partition_series(const ModelParams& p, const ExternalIndices& ext, const CovarianceMatrix& C,
                                SeriesOptions opt) {
  using Vertex = SeriesVertex;
  const std::vector<Vertex> all = series_vertices(p, ext);
  std::vector<Vertex> vu;
  for (const auto& v : all)
    if (v.w.c0 != 0.0) vu.push_back(v);
  const int nu = static_cast<int>(vu.size());

  PartitionValue out;
  out.evaluator = "series";
  std::vector<int> chosen;
  Eigen::MatrixXcd sub;
  std::function<void(int, cplx, cplx, cplx, int)> rec = [&](int start, cplx a0, cplx ap, cplx am, int n_u) {
    if (++out.terms > opt.max_terms) {
      std::ostringstream os;
      os << "partition_series: term budget " << opt.max_terms << " exceeded; partial P = " << out.P;
      throw std::length_error(os.str());
    }
    const int n = static_cast<int>(chosen.size());
    cplx det = 1.0;
    if (n > 0) {
      sub.resize(2 * n, 2 * n);
      for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b)
          for (int r = 0; r < 2; ++r)
            for (int c = 0; c < 2; ++c) {
              const Vertex& va = all[chosen[a]];
              const Vertex& vb = all[chosen[b]];
              sub(2 * a + r, 2 * b + c) = C(field_from_index(p, va.rows[r]), field_from_index(p, vb.cols[c]));
            }
      det = sub.partialPivLu().determinant();
    }
    out.P += a0 * det;
    out.dP_plus += ap * det;
    out.dP_minus += am * det;
    for (int g = start; g < static_cast<int>(all.size()); ++g) {
      const LambdaLinear& w = all[g].w;
      const bool is_u = g < nu;
      if (is_u && n_u >= opt.n_cap) continue;
      const cplx b0 = a0 * w.c0, bp = ap * w.c0 + a0 * w.lp, bm = am * w.c0 + a0 * w.lm;
      if (b0 == 0.0 && bp == 0.0 && bm == 0.0) continue;
      chosen.push_back(g);
      rec(g + 1, b0, bp, bm, n_u + (is_u ? 1 : 0));
      chosen.pop_back();
    }
  };
  rec(0, 1.0, 0.0, 0.0, 0);

  if (opt.n_cap < nu) {
    // Hadamard: |det| <= prod of row norms <= r^{2n}; e_k are elementary symmetric sums.
    double r2 = 0.0;
    const Eigen::MatrixXcd full = C.dense();
    for (int i = 0; i < full.rows(); ++i) r2 = std::max(r2, full.row(i).squaredNorm());
    std::vector<double> e(nu + 1, 0.0);
    e[0] = 1.0;
    for (const auto& v : vu) {
      const double a = std::abs(v.w.c0) * r2;
      for (int j = nu; j >= 1; --j) e[j] += e[j - 1] * a;
    }
    double lam = 0.0;
    for (const auto& v : all) lam += (std::abs(v.w.lp) + std::abs(v.w.lm)) * r2;
    double tail = 0.0;
    for (int j = opt.n_cap + 1; j <= nu; ++j) tail += e[j];
    out.tail_bound = tail * (1.0 + lam);
  }
  return out;
}

// ---------------------------------------------------------------- auxiliary fields

namespace {

PartitionValue hs_determinant(const ModelParams& p, const ExternalIndices& ext, const CovarianceMatrix& C,
                              const HsOptions& opt) {
  auto s = full_space(p);
  const JetPoly v = build_v(p, build_interaction_kernel(p, ext), s);
  const auto pairs = density_pairs(lambda_free(v));
  const auto lterms = lambda_terms(v);
  const int na = static_cast<int>(pairs.size());
  if (na > opt.max_aux_fields) {
    std::ostringstream os;
    os << "partition_hs: " << na << " auxiliary fields exceed the budget " << opt.max_aux_fields;
    throw std::length_error(os.str());
  }
  const Eigen::MatrixXcd Cd = cov_dense(C, *s);
  const int N = static_cast<int>(Cd.rows());
  PartitionValue out;
  out.evaluator = "hs";
  std::vector<int> lrows;
  for (const auto& t : lterms)
    for (int b : bits_of(t.m & s->bar_mask(0))) lrows.push_back(b);
  std::sort(lrows.begin(), lrows.end());
  lrows.erase(std::unique(lrows.begin(), lrows.end()), lrows.end());
  std::vector<int> row_slot(N, -1);
  for (size_t i = 0; i < lrows.size(); ++i) row_slot[lrows[i]] = static_cast<int>(i);

  const double norm = std::ldexp(1.0, -na);
  Eigen::VectorXcd d(N);
  for (long long cfg = 0; cfg < (1LL << na); ++cfg) {
    d.setZero();
    for (int g = 0; g < na; ++g) {
      const cplx a = (cfg >> g & 1) ? -pairs[g].a : pairs[g].a;
      d(pairs[g].i) += a;
      d(pairs[g].j) += a;
    }
    const Eigen::MatrixXcd A = Eigen::MatrixXcd::Identity(N, N) + d.asDiagonal() * Cd;
    const Eigen::PartialPivLU<Eigen::MatrixXcd> lu(A);
    const cplx z = lu.determinant();
    out.P += norm * z;
    ++out.terms;
    if (lterms.empty()) continue;
    // rows of Ct = C A^{-1}: solve A^T x = C(a, :)^T
    Eigen::MatrixXcd rhs(N, lrows.size());
    for (size_t i = 0; i < lrows.size(); ++i) rhs.col(i) = Cd.row(lrows[i]).transpose();
    const Eigen::MatrixXcd ct = lu.transpose().solve(rhs);  // column i = Ct(lrows[i], :)^T
    for (const auto& t : lterms) {
      const auto b = bits_of(t.m & s->bar_mask(0));
      auto u = bits_of(t.m & s->unbar_mask(0));
      for (int& x : u) x -= s->n();
      Eigen::MatrixXcd m(b.size(), u.size());
      for (size_t j = 0; j < b.size(); ++j)
        for (size_t kk = 0; kk < u.size(); ++kk) m(j, kk) = ct(u[kk], row_slot[b[j]]);
      const int a = static_cast<int>(b.size());
      const double sgn = (a * (a - 1) / 2) % 2 ? -1.0 : 1.0;
      const cplx e = norm * z * sgn * m.determinant();
      out.dP_plus += t.lp * e;
      out.dP_minus += t.lm * e;
    }
  }
  return out;
}

// L = 1: each slice's configuration sum is an operator on the 2^6 Fock space.
PartitionValue hs_transfer(const ModelParams& p, const ExternalIndices& ext) {
  if (p.L != 1) throw std::invalid_argument("partition_hs transfer-matrix mode needs L = 1");
  const int nm = num_modes(1);
  std::vector<FieldIndex> fields;
  for (int i = 0; i < nm; ++i) {
    const Mode m = mode_from_index(1, i);
    fields.push_back({m.orb, m.x1, m.x2, m.spin, 0});
  }
  auto s = make_space(fields);
  JetPoly v(s);
  add_slice<Jet>(v, build_interaction_kernel(p, ext), p.h, [](int mode) { return mode; },
                 [](const LambdaLinear& u) { return u.to_jet(0); });
  const auto pairs = density_pairs(lambda_free(v));
  JetPoly lam(s);
  for (const auto& [m, c] : v.terms()) {
    Jet j(0.0);
    j.at(1, 0) = c.lambda_coeff(1);
    j.at(2, 0) = c.lambda_coeff(-1);
    if (!j.is_zero()) lam.add_term(m, j);
  }
  const int na = static_cast<int>(pairs.size());
  const int dim = 1 << nm;
  std::vector<Eigen::MatrixXcd> cr(nm), an(nm);
  for (int i = 0; i < nm; ++i) {
    an[i] = Eigen::MatrixXcd(annihilator(nm, i));
    cr[i] = an[i].adjoint();
  }
  auto to_operator = [&](Mask m) {
    Eigen::MatrixXcd op = Eigen::MatrixXcd::Identity(dim, dim);
    for (int b : bits_of(m & s->bar_mask(0))) op = op * cr[b];
    for (int u : bits_of(m & s->unbar_mask(0))) op = op * an[u - nm];
    return op;
  };
  std::array<Eigen::MatrixXcd, 3> W;
  for (auto& w : W) w = Eigen::MatrixXcd::Zero(dim, dim);
  const double norm = std::ldexp(1.0, -na);
  for (long long cfg = 0; cfg < (1LL << na); ++cfg) {
    JetPoly g = JetPoly::constant(s, Jet(1.0));
    for (int q = 0; q < na; ++q) {
      const cplx a = (cfg >> q & 1) ? -pairs[q].a : pairs[q].a;
      for (int i : {pairs[q].i, pairs[q].j})
        g = g * (JetPoly::constant(s, Jet(1.0)) + JetPoly::monomial(s, {s->id(0, true, i), s->id(0, false, i)}, Jet(a)));
    }
    g = g * (JetPoly::constant(s, Jet(1.0)) + lam);
    for (const auto& [m, c] : g.terms()) {
      const Eigen::MatrixXcd op = to_operator(m);
      for (int l = 0; l < 3; ++l)
        if (c.at(l, 0) != 0.0) W[l] += norm * c.at(l, 0) * op;
    }
  }
  const Eigen::MatrixXcd H = Eigen::MatrixXcd(build_h0(p).mat);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(H);
  const double e0 = es.eigenvalues().minCoeff();
  Eigen::VectorXcd ex(dim);
  double z0 = 0.0;
  for (int i = 0; i < dim; ++i) {
    ex(i) = std::exp(-(es.eigenvalues()(i) - e0) / p.h);
    z0 += std::exp(-p.beta * (es.eigenvalues()(i) - e0));
  }
  const Eigen::MatrixXcd E = es.eigenvectors() * ex.asDiagonal() * es.eigenvectors().adjoint();
  const Eigen::MatrixXcd T0 = E * W[0];
  Eigen::MatrixXcd pw = Eigen::MatrixXcd::Identity(dim, dim);
  for (int i = 0; i + 1 < p.n_time; ++i) pw = pw * T0;
  PartitionValue out;
  out.evaluator = "hs-transfer";
  out.P = (T0 * pw).trace() / z0;
  out.dP_plus = static_cast<double>(p.n_time) * (E * W[1] * pw).trace() / z0;
  out.dP_minus = static_cast<double>(p.n_time) * (E * W[2] * pw).trace() / z0;
  out.terms = (1LL << na);
  return out;
}

}  // namespace

PartitionValue partition_hs(const ModelParams& p, const ExternalIndices& ext, const CovarianceMatrix& C,
                            HsOptions opt) {
  if (opt.mode == HsMode::TransferMatrix) return hs_transfer(p, ext);
  return hs_determinant(p, ext, C, opt);
}

std::string evaluator_name(Evaluator e) {
  switch (e) {
    case Evaluator::Engine: return "engine";
    case Evaluator::Series: return "series";
    case Evaluator::Hs: return "hs";
    case Evaluator::HsTransfer: return "hs-transfer";
  }
  return "?";
}

PartitionValue evaluate_partition(Evaluator e, const ModelParams& p, const ExternalIndices& ext) {
  if (e == Evaluator::HsTransfer) return partition_hs(p, ext, CovarianceMatrix{}, {HsMode::TransferMatrix});
  const CovarianceMatrix C = covariance_full(p);
  switch (e) {
    case Evaluator::Engine: return partition_engine(p, ext, C);
    case Evaluator::Series: return partition_series(p, ext, C);
    default: return partition_hs(p, ext, C);
  }
}

double correlation_from_partition(const ModelParams& p, const PartitionValue& v, double* imag_part) {
  if (!(v.P.real() > 0.0)) throw std::domain_error("Re P_h(0) <= 0: the logarithm is undefined");
  const cplx c = -v.dP() / v.P / p.beta;
  if (imag_part) *imag_part = c.imag();
  return c.real();
}

CorrelationResult correlation_from_log_derivative(const ModelParams& p, const ExternalIndices& ext, Evaluator e,
                                                  const std::vector<int>& n_times, std::optional<double> reference) {
  if (n_times.empty()) throw std::invalid_argument("empty h sweep");
  CorrelationResult r;
  r.reference = reference;
  for (int n : n_times) {
    HSweepPoint pt;
    pt.n_time = n;
    const ModelParams q = with_slices(p, n);
    pt.value = evaluate_partition(e, q, ext);
    pt.correlation = correlation_from_partition(q, pt.value, &pt.imag);
    r.sweep.push_back(pt);
  }
  const size_t n = r.sweep.size();
  for (size_t i = 1; i < n; ++i)
    if (r.sweep[i].n_time != 2 * r.sweep[i - 1].n_time) throw std::invalid_argument("h sweep must double");
  // Orders from errors against the reference when given, otherwise from successive differences.
  std::vector<double> err;
  if (reference)
    for (const auto& pt : r.sweep) err.push_back(std::abs(pt.correlation - *reference));
  else
    for (size_t i = 1; i < n; ++i) err.push_back(std::abs(r.sweep[i].correlation - r.sweep[i - 1].correlation));
  for (size_t i = 1; i < err.size(); ++i) r.orders.push_back(std::log2(err[i - 1] / err[i]));
  r.order = r.orders.empty() ? 0.0 : r.orders.back();
  // Richardson tableau for an expansion in integer powers of 1/h.
  std::vector<double> col;
  for (const auto& pt : r.sweep) col.push_back(pt.correlation);
  for (size_t k = 1; k < n; ++k) {
    const double f = std::ldexp(1.0, static_cast<int>(k));
    for (size_t i = n - 1; i >= k; --i) col[i] = (f * col[i] - col[i - 1]) / (f - 1.0);
  }
  r.extrapolated = col.back();
  return r;
}

// ---------------------------------------------------------------- flow

JetPoly z_component(const JetPoly& f, int n) {
  JetPoly out(f.space());
  for (const auto& [m, c] : f.terms()) {
    Jet j(0.0);
    for (int l = 0; l < 3; ++l) j.at(l, 0) = c.at(l, n);
    if (!j.is_zero()) out.add_term(m, j);
  }
  return out;
}

namespace {

double max_abs(const JetPoly& f) {
  double m = 0.0;
  for (const auto& [k, c] : f.terms()) m = std::max(m, c.max_abs());
  return m;
}

int max_degree(const Poly& f) {
  int d = 0;
  for (const auto& [m, c] : f.terms()) d = std::max(d, popcount(m));
  return d;
}

}  // namespace

JetPoly g_flow(const FlowInput& in, int l) {
  const ModelParams& p = in.p;
  auto s = full_space(p);
  const JetPoly v = build_v(p, build_interaction_kernel(p, in.ext), s);
  if (l == in.cut.N_h + 1) return v;
  if (l < in.cut.N_beta || l > in.cut.N_h) throw std::out_of_range("g_flow: scale outside [N_beta, N_h + 1]");
  const SlicedCovarianceSet set = sliced_covariances(p, in.cut, in.shift);
  const JetPoly z = convolve(exp_poly(v), cov_dense(set.tail(l), *s), 0);
  if (!(z.constant_term().scalar().real() > 0.0)) throw std::domain_error("g_flow: Re of the integral is not positive");
  return log_poly(z);
}

const FlowLevel& ScaleFlow::at(int l) const {
  for (const auto& lv : levels)
    if (lv.l == l) return lv;
  throw std::out_of_range("ScaleFlow::at");
}

ScaleFlow j_flow(const FlowInput& in, int n_max) {
  if (n_max < 1 || n_max > Jet::kMaxOrder) throw std::invalid_argument("j_flow: n_max outside [1, 7]");
  const ModelParams& p = in.p;
  auto s = full_space(p);
  ScaleFlow flow;
  flow.input = in;
  flow.n_max = n_max;
  const SlicedCovarianceSet set = sliced_covariances(p, in.cut, in.shift);
  FlowLevel top;
  top.l = in.cut.N_h + 1;
  top.J = build_v(p, build_interaction_kernel(p, in.ext), s);
  top.F = top.J;
  top.T = JetPoly(s);
  flow.levels.push_back(top);
  for (int l = in.cut.N_h; l >= in.cut.N_beta; --l) {
    const JetPoly& J = flow.levels.back().J;
    const Eigen::MatrixXcd Cl = cov_dense(set.slices.at(l), *s);
    FlowLevel lv;
    lv.l = l;
    lv.F = convolve(J, Cl, 0);
    const JetPoly z = convolve(exp_poly(J * Jet::z(n_max)), Cl, 0);
    if (!(z.constant_term().scalar().real() > 0.0)) throw std::domain_error("j_flow: Re of the integral is not positive");
    const JetPoly lg = log_poly(z);
    lv.T = JetPoly(s);
    for (int n = 1; n <= n_max; ++n) {
      JetPoly tn = z_component(lg, n);
      lv.taylor_sizes.push_back(max_abs(tn));
      if (n >= 2) lv.T += tn;
    }
    const auto& ts = lv.taylor_sizes;
    if (ts.size() >= 3 && ts[ts.size() - 2] > 0.0) {
      const double r = ts.back() / ts[ts.size() - 2];
      lv.tail_estimate = r < 1.0 ? ts.back() * r / (1.0 - r) : INFINITY;
    }
    lv.J = lv.F + lv.T;
    lv.J.prune();
    flow.levels.push_back(std::move(lv));
  }
  return flow;
}

double kernel_max_diff(const JetPoly& a, const JetPoly& b, double h) {
  const JetPoly d = a - b;
  const int n = d.space()->n();
  double worst = 0.0;
  for (int lam = 0; lam < 3; ++lam)
    for (int m = 0; m <= n; ++m)
      for (const auto& [key, v] : extract_kernel(d, m, h, lam, 0).ordered) worst = std::max(worst, std::abs(v));
  return worst;
}

InductiveReport inductive_bound_probe(const ScaleFlow& flow, double alpha, double c0, double M) {
  const FlowInput& in = flow.input;
  const double h = in.p.h;
  const int Nb = in.cut.N_beta;
  const int nf = num_fields(in.p);
  InductiveReport rep;
  auto norm = [&](const JetPoly& f, int m) { return kernel_norms(extract_kernel(f, m, h, 0, 0), h).one_infty_norm; };
  for (int l = Nb + 1; l <= in.cut.N_h + 1; ++l) {
    const FlowLevel& lv = flow.at(l);
    InductiveRow row;
    row.l = l;
    row.q1 = std::pow(M, -Nb) * alpha * c0 * (norm(lv.F, 1) + norm(lv.T, 1));
    for (int m = 1; m <= nf; ++m) {
      const double s = norm(lv.F, m) + norm(lv.T, m);
      if (s == 0.0) continue;
      row.q2 += std::pow(M, -Nb) * std::pow(alpha * c0, m) * std::pow(M, (l - Nb) * (m - 2.0)) * s;
    }
    rep.rows.push_back(row);
    rep.max_q1 = std::max(rep.max_q1, row.q1);
    rep.max_q2 = std::max(rep.max_q2, row.q2);
  }
  const ModelParams& p = in.p;
  const double u_max = std::max({std::abs(p.U_c), std::abs(p.U_o), std::abs(p.lambda_p), std::abs(p.lambda_m)});
  rep.seed_bound = std::pow(M, -Nb) * alpha * alpha * c0 * c0 * 1.5 * u_max;
  rep.seed_free_norm = norm(flow.at(in.cut.N_h + 1).F, 2);
  const double seed_q2 = rep.rows.empty() ? 0.0 : rep.rows.back().q2;
  rep.pass = rep.max_q1 < 1.0 && rep.max_q2 < 1.0 && seed_q2 <= rep.seed_bound * (1.0 + 1e-12) &&
             rep.seed_free_norm <= 1.5 * u_max * (1.0 + 1e-12);
  return rep;
}

SchwingerReport schwinger_bound_probe(const ScaleFlow& flow, double c0) {
  const Jet j0 = flow.at(flow.input.cut.N_beta).J.constant_term();
  SchwingerReport r;
  r.lhs_plus = std::abs(j0.lambda_coeff(1)) / flow.input.p.beta;
  r.lhs_minus = std::abs(j0.lambda_coeff(-1)) / flow.input.p.beta;
  r.rhs = std::ldexp(c0 * c0, 12);
  r.pass = r.lhs_plus <= r.rhs && r.lhs_minus <= r.rhs;
  return r;
}

Poly tree_order_two(const Poly& J, const Eigen::MatrixXcd& C) {
  const auto& s1 = J.space();
  auto s3 = make_space(s1->fields, 3);
  Poly j3(s3);
  for (const auto& [m, c] : J.terms()) j3.add_term(m, c);  // replica 0 masks coincide
  const Poly prod = substitute_shift(j3, 0, 1) * substitute_shift(j3, 0, 2);
  const int nodes = max_degree(J) / 2 + 1;
  std::vector<double> xs, ws;
  gauss_legendre(nodes, 0.0, 1.0, xs, ws);
  Poly acc(s3);
  for (int i = 0; i < nodes; ++i) {
    const Poly e = exp_laplacian(prod, C, {{1, 1, 1.0}, {2, 2, 1.0}, {1, 2, xs[i]}, {2, 1, xs[i]}});
    acc += (laplacian(e, C, 1, 2) + laplacian(e, C, 2, 1)) * cplx(0.5 * ws[i]);
  }
  const Poly r = set_zero(set_zero(acc, 1), 2);
  Poly out(s1);
  for (const auto& [m, c] : r.terms()) out.add_term(m, c);
  return out;
}

DeterminantBoundReport determinant_bound_probe(const ModelParams& p, const Cutoff& cut, int l, Shift shift,
                                               int samples, unsigned seed) {
  DeterminantBoundReport rep;
  rep.seed = seed;
  auto base = full_space(p);
  const int n = base->n();
  const Eigen::MatrixXcd C = cov_dense(sliced_covariance(p, cut, l, shift), *base);
  const GramBuilder gram(p, cut, l, shift);
  double fmax = 0.0, gmax = 0.0;
  for (const auto& X : base->fields) {
    const GramVectors v = gram(X);
    fmax = std::max(fmax, gram.norm(v.f));
    gmax = std::max(gmax, gram.norm(v.g));
  }
  rep.c0 = fmax * gmax;
  std::mt19937_64 rng(seed);
  rep.pass = true;
  for (int it = 0; it < samples; ++it) {
    const int nf = 2 + static_cast<int>(rng() % 2);
    const int pairs = 1 + static_cast<int>(rng() % std::min(4, n));
    auto s = make_space(base->fields, nf);
    std::vector<int> pos(n);
    for (int i = 0; i < n; ++i) pos[i] = i;
    std::vector<std::vector<int>> ids(nf);
    std::shuffle(pos.begin(), pos.end(), rng);
    for (int k = 0; k < pairs; ++k) ids[rng() % nf].push_back(s->id(0, true, pos[k]));
    std::shuffle(pos.begin(), pos.end(), rng);
    for (int k = 0; k < pairs; ++k) ids[rng() % nf].push_back(s->id(0, false, pos[k]));
    Poly prod = Poly::constant(s, 1.0);
    DeterminantSample smp;
    for (int j = 0; j < nf; ++j) {
      for (int& g : ids[j]) g += j * 2 * n;  // move into replica j
      prod = prod * Poly::monomial(s, ids[j], 1.0);
      smp.m.push_back(static_cast<int>(ids[j].size()));
    }
    // M = sum_i w_i (block indicator of a random partition)
    const int parts = 1 + static_cast<int>(rng() % 3);
    std::vector<double> w(parts);
    double wsum = 0.0;
    for (double& x : w) wsum += (x = 0.1 + std::uniform_real_distribution<double>(0.0, 1.0)(rng));
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(nf, nf);
    for (int i = 0; i < parts; ++i) {
      std::vector<int> block(nf);
      for (int& b : block) b = static_cast<int>(rng() % nf);
      for (int q = 0; q < nf; ++q)
        for (int r = 0; r < nf; ++r)
          if (block[q] == block[r]) M(q, r) += w[i] / wsum;
    }
    std::vector<LaplacianTerm> terms;
    for (int q = 0; q < nf; ++q)
      for (int r = 0; r < nf; ++r)
        if (M(q, r) != 0.0) terms.push_back({q, r, M(q, r)});
    Poly e = exp_laplacian(prod, C, terms);
    for (int j = 0; j < nf; ++j) e = set_zero(e, j);
    smp.value = std::abs(e.constant_term());
    smp.bound = std::pow(rep.c0, pairs);
    rep.fitted_c0 = std::max(rep.fitted_c0, std::pow(smp.value, 1.0 / pairs));
    rep.pass = rep.pass && smp.value <= smp.bound * (1.0 + 1e-12);
    rep.samples.push_back(smp);
  }
  return rep;
}

}  // namespace cuolab
