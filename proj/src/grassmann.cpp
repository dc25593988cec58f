#include "cuolab/grassmann.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>
#include <stdexcept>

namespace cuolab {

// ---------------------------------------------------------------- space

GeneratorSpace::GeneratorSpace(std::vector<FieldIndex> f, int r) : fields(std::move(f)), replicas(r) {
  if (r < 1) throw std::invalid_argument("generator space needs a replica");
  if (total() > kMaxGenerators) throw std::length_error("generator space exceeds 128 generators");
}

int GeneratorSpace::position(const FieldIndex& X) const {
  for (int i = 0; i < n(); ++i)
    if (fields[i] == X) return i;
  return -1;
}

SpacePtr make_space(std::vector<FieldIndex> fields, int replicas) {
  return std::make_shared<const GeneratorSpace>(std::move(fields), replicas);
}

// ---------------------------------------------------------------- jets

Jet& Jet::operator+=(const Jet& o) {
  K_ = std::max(K_, o.K_);
  for (size_t i = 0; i < v_.size(); ++i) v_[i] += o.v_[i];
  return *this;
}

Jet& Jet::operator-=(const Jet& o) {
  K_ = std::max(K_, o.K_);
  for (size_t i = 0; i < v_.size(); ++i) v_[i] -= o.v_[i];
  return *this;
}

Jet& Jet::operator*=(cplx s) {
  for (auto& x : v_) x *= s;
  return *this;
}

Jet operator*(const Jet& a, const Jet& b) {
  Jet r;
  const int K = std::max(a.K_, b.K_);
  r.K_ = static_cast<uint8_t>(K);
  for (int i = 0; i <= K; ++i) {
    const cplx a0 = a.at(0, i), a1 = a.at(1, i), a2 = a.at(2, i);
    if (a0 == 0.0 && a1 == 0.0 && a2 == 0.0) continue;
    for (int j = 0; i + j <= K; ++j) {
      const cplx b0 = b.at(0, j);
      r.at(0, i + j) += a0 * b0;
      r.at(1, i + j) += a0 * b.at(1, j) + a1 * b0;
      r.at(2, i + j) += a0 * b.at(2, j) + a2 * b0;
    }
  }
  return r;
}

bool Jet::is_zero() const {
  return std::all_of(v_.begin(), v_.end(), [](const cplx& x) { return x == 0.0; });
}

double Jet::max_abs() const {
  double m = 0.0;
  for (const auto& x : v_) m = std::max(m, std::abs(x));
  return m;
}

Jet Jet::truncated(int K) const {
  Jet r = *this;
  r.K_ = static_cast<uint8_t>(K);
  for (int lam = 0; lam < 3; ++lam)
    for (int k = K + 1; k <= kMaxOrder; ++k) r.at(lam, k) = 0.0;
  return r;
}

namespace {

// nilpotent part series: sum_n c_n x^n, x = a - a0, terminating at order K + 2
template <class F>
Jet series(const Jet& a, F coeff) {
  Jet x = a;
  x.at(0, 0) = 0.0;
  Jet r(coeff(0), a.order()), pw(1.0, a.order());
  for (int n = 1; n <= a.order() + 2; ++n) {
    pw = pw * x;
    if (pw.is_zero()) break;
    r += pw * coeff(n);
  }
  return r;
}

}  // namespace

Jet exp(const Jet& a) {
  const cplx e0 = std::exp(a.scalar());
  double fact = 1.0;
  int last = 0;
  return series(a, [&](int n) {
    for (; last < n; ++last) fact *= last + 1;
    return e0 / fact;
  });
}

Jet log(const Jet& a) {
  const cplx a0 = a.scalar();
  return series(a, [&](int n) -> cplx {
    if (n == 0) return std::log(a0);
    return (n % 2 ? 1.0 : -1.0) / (static_cast<double>(n) * std::pow(a0, n));
  });
}

Jet inverse(const Jet& a) {
  const cplx a0 = a.scalar();
  return series(a, [&](int n) -> cplx { return (n % 2 ? -1.0 : 1.0) / std::pow(a0, n + 1); });
}

namespace {

bool is_zero(const cplx& c) { return c == 0.0; }
bool is_zero(const Jet& c) { return c.is_zero(); }
double max_abs(const cplx& c) { return std::abs(c); }
double max_abs(const Jet& c) { return c.max_abs(); }
cplx exp(const cplx& c) { return std::exp(c); }
cplx log(const cplx& c) { return std::log(c); }
cplx inverse(const cplx& c) { return 1.0 / c; }
cplx scalar(const cplx& c) { return c; }
cplx scalar(const Jet& c) { return c.scalar(); }
template <class T>
T neg(const T& c) {
  return c * cplx(-1.0);
}

// Sorts ids; returns false if a generator repeats. sign flips per transposition.
bool canonical(std::vector<int>& ids, bool& odd) {
  odd = false;
  for (size_t i = 1; i < ids.size(); ++i)
    for (size_t j = i; j > 0 && ids[j - 1] >= ids[j]; --j) {
      if (ids[j - 1] == ids[j]) return false;
      std::swap(ids[j - 1], ids[j]);
      odd = !odd;
    }
  return true;
}

}  // namespace

// ---------------------------------------------------------------- polynomial basics

template <class T>
GrassmannPoly<T> GrassmannPoly<T>::constant(SpacePtr s, T c) {
  GrassmannPoly p(std::move(s));
  p.add_term(0, c);
  return p;
}

template <class T>
GrassmannPoly<T> GrassmannPoly<T>::generator(SpacePtr s, int replica, bool bar, int pos) {
  const int g = s->id(replica, bar, pos);
  return monomial(std::move(s), {g}, T(1.0));
}

template <class T>
GrassmannPoly<T> GrassmannPoly<T>::monomial(SpacePtr s, const std::vector<int>& ids, T c) {
  GrassmannPoly p(std::move(s));
  std::vector<int> sorted = ids;
  bool odd = false;
  if (!canonical(sorted, odd)) return p;
  Mask m = 0;
  for (int g : sorted) m |= bit(g);
  p.add_term(m, odd ? neg(c) : c);
  return p;
}

template <class T>
T GrassmannPoly<T>::constant_term() const {
  return coeff(0);
}

template <class T>
T GrassmannPoly<T>::coeff(Mask m) const {
  const auto it = terms_.find(m);
  return it == terms_.end() ? T(0.0) : it->second;
}

template <class T>
void GrassmannPoly<T>::add_term(Mask m, const T& c) {
  if (is_zero(c)) return;
  auto [it, fresh] = terms_.try_emplace(m, c);
  if (!fresh) {
    it->second += c;
    if (is_zero(it->second)) terms_.erase(it);
  }
}

template <class T>
void GrassmannPoly<T>::prune(double tol) {
  std::erase_if(terms_, [&](const auto& kv) { return max_abs(kv.second) <= tol; });
}

template <class T>
void GrassmannPoly<T>::check_space(const GrassmannPoly& o) const {
  if (space_ != o.space_ && (space_->fields != o.space_->fields || space_->replicas != o.space_->replicas))
    throw std::invalid_argument("grassmann: mismatched generator spaces");
}

template <class T>
GrassmannPoly<T>& GrassmannPoly<T>::operator+=(const GrassmannPoly& o) {
  check_space(o);
  for (const auto& [m, c] : o.terms_) add_term(m, c);
  return *this;
}

template <class T>
GrassmannPoly<T>& GrassmannPoly<T>::operator-=(const GrassmannPoly& o) {
  check_space(o);
  for (const auto& [m, c] : o.terms_) add_term(m, neg(c));
  return *this;
}

template <class T>
GrassmannPoly<T>& GrassmannPoly<T>::operator*=(const T& c) {
  for (auto& [m, v] : terms_) v = v * c;
  std::erase_if(terms_, [](const auto& kv) { return is_zero(kv.second); });
  return *this;
}

template <class T>
GrassmannPoly<T> GrassmannPoly<T>::operator*(const GrassmannPoly& o) const {
  check_space(o);
  GrassmannPoly r(space_);
  r.terms_.reserve(terms_.size() * o.terms_.size() / 2 + 1);
  for (const auto& [ma, ca] : terms_)
    for (const auto& [mb, cb] : o.terms_) {
      if (ma & mb) continue;
      const T v = ca * cb;
      r.add_term(ma | mb, merge_parity(ma, mb) ? neg(v) : v);
    }
  return r;
}

template <class T>
bool GrassmannPoly<T>::is_even() const {
  return std::all_of(terms_.begin(), terms_.end(), [](const auto& kv) { return popcount(kv.first) % 2 == 0; });
}

template <class T>
double GrassmannPoly<T>::max_abs_diff(const GrassmannPoly& o) const {
  double d = 0.0;
  for (const auto& [m, c] : terms_) d = std::max(d, max_abs(c - o.coeff(m)));
  for (const auto& [m, c] : o.terms_)
    if (!terms_.count(m)) d = std::max(d, max_abs(c));
  return d;
}

namespace {
std::string coeff_string(const cplx& c) {
  std::ostringstream s;
  s.precision(17);
  s << c.real() << (c.imag() < 0 ? "" : "+") << c.imag() << 'i';
  return s.str();
}
std::string coeff_string(const Jet& j) {
  std::ostringstream s;
  s << '[';
  bool first = true;
  for (int lam = 0; lam < 3; ++lam)
    for (int k = 0; k <= j.order(); ++k)
      if (j.at(lam, k) != 0.0) {
        s << (first ? "" : " ") << "l" << lam << "z" << k << ':' << coeff_string(j.at(lam, k));
        first = false;
      }
  s << ']';
  return s.str();
}
}  // namespace

template <class T>
std::string GrassmannPoly<T>::dump() const {
  std::vector<std::string> lines;
  const int n = space_->n();
  for (const auto& [m, c] : terms_) {
    std::ostringstream s;
    for (int r = 0; r < space_->replicas; ++r) {
      if (!(m & space_->replica_mask(r))) continue;
      s << r << ':';
      bool first = true;
      for (int i = 0; i < n; ++i)
        if (m & bit(space_->id(r, true, i))) {
          s << (first ? "" : ",") << i;
          first = false;
        }
      s << '|';
      first = true;
      for (int i = 0; i < n; ++i)
        if (m & bit(space_->id(r, false, i))) {
          s << (first ? "" : ",") << i;
          first = false;
        }
      s << ' ';
    }
    if (m == 0) s << "const ";
    s << coeff_string(c);
    lines.push_back(s.str());
  }
  std::sort(lines.begin(), lines.end());
  std::string out;
  for (const auto& l : lines) out += l + '\n';
  return out;
}

// ---------------------------------------------------------------- calculus

template <class T>
GrassmannPoly<T> gaussian_integral(const GrassmannPoly<T>& f, const Eigen::MatrixXcd& C, int r) {
  const auto& s = *f.space();
  const int n = s.n();
  if (C.rows() != n || C.cols() != n) throw std::invalid_argument("gaussian_integral: covariance size");
  const Mask rm = s.replica_mask(r), bm = s.bar_mask(r), um = s.unbar_mask(r);
  GrassmannPoly<T> out(f.space());
  std::unordered_map<Mask, cplx, MaskHash> cache;
  for (const auto& [m, c] : f.terms()) {
    const Mask part = m & rm;
    const int a = popcount(part & bm), b = popcount(part & um);
    if (a != b) continue;
    auto it = cache.find(part);
    if (it == cache.end()) {
      cplx det = 1.0;
      if (a > 0) {
        std::vector<int> xs, ys;
        for (int i = 0; i < n; ++i) {
          if (part & bit(s.id(r, true, i))) xs.push_back(i);
          if (part & bit(s.id(r, false, i))) ys.push_back(i);
        }
        Eigen::MatrixXcd D(a, a);
        for (int j = 0; j < a; ++j)
          for (int k = 0; k < a; ++k) D(j, k) = C(xs[j], ys[k]);
        // stored unbars ascend; the defining order psi_{Y_b}...psi_{Y_1} is their reversal
        det = D.determinant() * ((a * (a - 1) / 2) % 2 ? -1.0 : 1.0);
      }
      it = cache.emplace(part, det).first;
    }
    // the r-part is even and contiguous in the global order, so it moves to the right freely
    if (it->second != 0.0) out.add_term(m & ~rm, c * it->second);
  }
  return out;
}

template <class T>
GrassmannPoly<T> left_derivative(const GrassmannPoly<T>& f, int g) {
  GrassmannPoly<T> out(f.space());
  for (const auto& [m, c] : f.terms()) {
    if (!(m & bit(g))) continue;
    const bool odd = popcount(m & below(g)) & 1;
    out.add_term(m & ~bit(g), odd ? neg(c) : c);
  }
  return out;
}

template <class T>
GrassmannPoly<T> exp_poly(const GrassmannPoly<T>& f) {
  const T f0 = f.constant_term();
  GrassmannPoly<T> nil = f;
  nil.add_term(0, neg(f0));
  GrassmannPoly<T> sum = GrassmannPoly<T>::constant(f.space(), T(1.0)), pw = sum;
  for (int k = 1; !nil.terms().empty(); ++k) {
    pw = pw * nil;
    if (pw.terms().empty()) break;
    pw *= T(1.0 / k);
    sum += pw;
  }
  return sum * exp(f0);
}

template <class T>
GrassmannPoly<T> log_poly(const GrassmannPoly<T>& f) {
  const T f0 = f.constant_term();
  if (!(scalar(f0).real() > 0.0)) throw std::domain_error("log_poly: Re f_0 <= 0");
  GrassmannPoly<T> x = f * inverse(f0);
  x.add_term(0, T(-1.0));
  GrassmannPoly<T> sum = GrassmannPoly<T>::constant(f.space(), log(f0)), pw = x;
  for (int k = 1; !pw.terms().empty(); ++k) {
    sum += pw * T((k % 2 ? 1.0 : -1.0) / k);
    pw = pw * x;
  }
  return sum;
}

template <class T>
GrassmannPoly<T> project(const GrassmannPoly<T>& f, int m) {
  const auto& s = *f.space();
  Mask bars = 0;
  for (int r = 0; r < s.replicas; ++r) bars |= s.bar_mask(r);
  GrassmannPoly<T> out(f.space());
  for (const auto& [mk, c] : f.terms())
    if (popcount(mk & bars) == m && popcount(mk & ~bars) == m) out.add_term(mk, c);
  return out;
}

template <class T>
GrassmannPoly<T> set_zero(const GrassmannPoly<T>& f, int r) {
  const Mask rm = f.space()->replica_mask(r);
  GrassmannPoly<T> out(f.space());
  for (const auto& [m, c] : f.terms())
    if (!(m & rm)) out.add_term(m, c);
  return out;
}

template <class T>
GrassmannPoly<T> substitute_shift(const GrassmannPoly<T>& f, int from, int to) {
  const auto& s = *f.space();
  const int offset = (to - from) * 2 * s.n();
  const Mask fm = s.replica_mask(from);
  GrassmannPoly<T> out(f.space());
  std::vector<int> ids, seq;
  for (const auto& [m, c] : f.terms()) {
    if (m & s.replica_mask(to)) throw std::invalid_argument("substitute_shift: target replica already present");
    ids.clear();
    for (Mask x = m; x; x &= x - 1) ids.push_back(lowest_bit(x));
    std::vector<int> movable;
    for (size_t i = 0; i < ids.size(); ++i)
      if (fm & bit(ids[i])) movable.push_back(static_cast<int>(i));
    const size_t nsub = size_t{1} << movable.size();
    for (size_t sub = 0; sub < nsub; ++sub) {
      seq = ids;
      for (size_t j = 0; j < movable.size(); ++j)
        if (sub >> j & 1) seq[movable[j]] += offset;
      bool odd = false;
      canonical(seq, odd);
      Mask nm = 0;
      for (int g : seq) nm |= bit(g);
      out.add_term(nm, odd ? neg(c) : c);
    }
  }
  return out;
}

template <class T>
GrassmannPoly<T> laplacian(const GrassmannPoly<T>& f, const Eigen::MatrixXcd& Q, int q, int r) {
  const auto& s = *f.space();
  const int n = s.n();
  const Mask bq = s.bar_mask(q), ur = s.unbar_mask(r);
  GrassmannPoly<T> out(f.space());
  for (const auto& [m, c] : f.terms()) {
    for (Mask ys = m & ur; ys; ys &= ys - 1) {
      const int gy = lowest_bit(ys);
      const bool s1 = popcount(m & below(gy)) & 1;
      const Mask m1 = m & ~bit(gy);
      for (Mask xs = m1 & bq; xs; xs &= xs - 1) {
        const int gx = lowest_bit(xs);
        const bool s2 = popcount(m1 & below(gx)) & 1;
        const cplx w = Q(gx % (2 * n), gy % (2 * n) - n);
        if (w == 0.0) continue;
        out.add_term(m1 & ~bit(gx), c * ((s1 ^ s2) ? w : -w));
      }
    }
  }
  return out;
}

template <class T>
GrassmannPoly<T> exp_laplacian(const GrassmannPoly<T>& f, const Eigen::MatrixXcd& Q,
                               const std::vector<LaplacianTerm>& terms) {
  GrassmannPoly<T> sum = f, cur = f;
  for (int k = 1; !cur.terms().empty(); ++k) {
    GrassmannPoly<T> next(f.space());
    for (const auto& t : terms) {
      if (t.weight == 0.0) continue;
      next += laplacian(cur, Q, t.q, t.r) * T(t.weight / static_cast<double>(k));
    }
    cur = std::move(next);
    sum += cur;
  }
  return sum;
}

template <class T>
GrassmannPoly<T> convolve(const GrassmannPoly<T>& f, const Eigen::MatrixXcd& C, int r) {
  return exp_laplacian(f, C, {{r, r, 1.0}});
}

// ---------------------------------------------------------------- kernels

namespace {
template <class T, class Get>
SparseKernel extract_impl(const GrassmannPoly<T>& f, int m, double h, int replica, Get get) {
  const auto& s = *f.space();
  SparseKernel k;
  k.m = m;
  const double norm = std::pow(h, 2 * m) / std::pow(std::tgamma(m + 1.0), 2);
  const Mask bm = s.bar_mask(replica), um = s.unbar_mask(replica), rm = s.replica_mask(replica);
  for (const auto& [mk, c] : f.terms()) {
    if (mk & ~rm) throw std::invalid_argument("extract_kernel: polynomial has other replicas");
    if (popcount(mk & bm) != m || popcount(mk & um) != m) continue;
    const cplx v = get(c);
    if (v == 0.0) continue;
    std::vector<int> X, Y;
    for (int i = 0; i < s.n(); ++i) {
      if (mk & bit(s.id(replica, true, i))) X.push_back(i);
      if (mk & bit(s.id(replica, false, i))) Y.push_back(i);
    }
    k.ordered[{X, Y}] = v * norm;
  }
  return k;
}
}  // namespace

SparseKernel extract_kernel(const Poly& f, int m, double h, int replica) {
  return extract_impl(f, m, h, replica, [](const cplx& c) { return c; });
}

SparseKernel extract_kernel(const JetPoly& f, int m, double h, int lam, int k, int replica) {
  return extract_impl(f, m, h, replica, [&](const Jet& c) { return c.at(lam, k); });
}

Poly from_kernel(SpacePtr s, const SparseKernel& k, double h, int replica) {
  Poly p(s);
  const double norm = std::pow(std::tgamma(k.m + 1.0), 2) / std::pow(h, 2 * k.m);
  for (const auto& [key, v] : k.ordered) {
    Mask mk = 0;
    for (int x : key.first) mk |= bit(s->id(replica, true, x));
    for (int y : key.second) mk |= bit(s->id(replica, false, y));
    p.add_term(mk, v * norm);
  }
  return p;
}

Poly jet_component(const JetPoly& f, int lam, int k) {
  Poly p(f.space());
  for (const auto& [m, c] : f.terms()) p.add_term(m, c.at(lam, k));
  return p;
}

JetPoly to_jet(const Poly& f, int K) {
  JetPoly p(f.space());
  for (const auto& [m, c] : f.terms()) p.add_term(m, Jet(c, K));
  return p;
}

Eigen::MatrixXcd restrict_covariance(const CovarianceMatrix& c, const GeneratorSpace& s) {
  return c.dense(s.fields, s.fields);
}

// ---------------------------------------------------------------- instantiations

#define CUOLAB_INSTANTIATE(T)                                                                                 \
  template class GrassmannPoly<T>;                                                                            \
  template GrassmannPoly<T> gaussian_integral(const GrassmannPoly<T>&, const Eigen::MatrixXcd&, int);         \
  template GrassmannPoly<T> left_derivative(const GrassmannPoly<T>&, int);                                    \
  template GrassmannPoly<T> exp_poly(const GrassmannPoly<T>&);                                                \
  template GrassmannPoly<T> log_poly(const GrassmannPoly<T>&);                                                \
  template GrassmannPoly<T> project(const GrassmannPoly<T>&, int);                                            \
  template GrassmannPoly<T> set_zero(const GrassmannPoly<T>&, int);                                           \
  template GrassmannPoly<T> substitute_shift(const GrassmannPoly<T>&, int, int);                              \
  template GrassmannPoly<T> laplacian(const GrassmannPoly<T>&, const Eigen::MatrixXcd&, int, int);            \
  template GrassmannPoly<T> exp_laplacian(const GrassmannPoly<T>&, const Eigen::MatrixXcd&,                   \
                                          const std::vector<LaplacianTerm>&);                                 \
  template GrassmannPoly<T> convolve(const GrassmannPoly<T>&, const Eigen::MatrixXcd&, int);

CUOLAB_INSTANTIATE(cplx)
CUOLAB_INSTANTIATE(Jet)

}  // namespace cuolab
