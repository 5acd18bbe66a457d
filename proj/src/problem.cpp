#include "fedlrmc/problem.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fedlrmc {

Matrix GroundTruth::b_star() const {
  return sigma_star.asDiagonal() * v_star.matrix().transpose();
}

Matrix GroundTruth::dense() const { return u_star.matrix() * b_star(); }

namespace {

Matrix gaussian_matrix(int rows, int cols, Prng& rng) {
  Matrix m(rows, cols);
  for (int j = 0; j < cols; ++j)
    for (int i = 0; i < rows; ++i) m(i, j) = rng.next_gaussian();
  return m;
}

double tight_mu(const GroundTruth& gt) {
  double max_row = 0.0;
  for (int j = 0; j < gt.n; ++j) max_row = std::max(max_row, gt.u_star.matrix().row(j).norm());
  double max_col = 0.0;
  for (int k = 0; k < gt.q; ++k) max_col = std::max(max_col, gt.v_star.matrix().row(k).norm());
  const double mu_u = max_row * std::sqrt(static_cast<double>(gt.n) / gt.r);
  const double mu_v = max_col * std::sqrt(static_cast<double>(gt.q) / gt.r);
  return std::max({mu_u, mu_v, 1.0});
}

}  // namespace

GroundTruth gen_ground_truth(int n, int q, int r, SpectrumSpec spectrum, std::uint64_t seed) {
  if (r < 1 || r > std::min(n, q)) throw InvalidDimensions("gen_ground_truth: bad rank");
  Prng rng(seed, RngStream::ground_truth);

  GroundTruth gt;
  gt.n = n;
  gt.q = q;
  gt.r = r;
  gt.u_star = thin_qr(gaussian_matrix(n, r, rng)).q;

  if (spectrum.kind == SpectrumKind::gaussian) {
    // B* = Gaussian r x q; its SVD rotation is absorbed into U* so that
    // X* = U* diag(Sigma*) V*^T holds exactly. Row norms of U* are invariant
    // under the rotation, so mu is unchanged.
    Matrix b = gaussian_matrix(r, q, rng);
    Eigen::JacobiSVD<Matrix> svd(b.transpose(), Eigen::ComputeThinU | Eigen::ComputeThinV);
    gt.sigma_star = svd.singularValues();
    gt.v_star = OrthonormalBasis(svd.matrixU());  // q x r right singular vectors of B*
    gt.u_star = OrthonormalBasis(gt.u_star.matrix() * svd.matrixV());
  } else {
    if (spectrum.kappa_target < 1.0)
      throw InvalidDimensions("gen_ground_truth: kappa_target must be >= 1");
    gt.v_star = thin_qr(gaussian_matrix(q, r, rng)).q;
    gt.sigma_star = Vector(r);
    const double smax = 1.0;
    const double smin = smax / spectrum.kappa_target;
    for (int i = 0; i < r; ++i)
      gt.sigma_star(i) = (r == 1) ? smax : smax - (smax - smin) * i / (r - 1);
  }

  gt.kappa = gt.sigma_star(0) / gt.sigma_star(r - 1);
  gt.mu = tight_mu(gt);
  return gt;
}

ObservationMask sample_mask(int n, int q, double p, std::uint64_t seed) {
  if (!(p > 0.0 && p <= 1.0)) throw InvalidDimensions("sample_mask: p must be in (0,1]");
  Prng rng(seed, RngStream::mask);
  ObservationMask mask;
  mask.n = n;
  mask.q = q;
  mask.p = p;
  mask.col_ptr.assign(q + 1, 0);
  mask.row_idx.reserve(static_cast<std::size_t>(p * n * q * 1.05) + 16);
  for (int k = 0; k < q; ++k) {
    for (int j = 0; j < n; ++j)
      if (rng.next_bernoulli(p)) mask.row_idx.push_back(j);
    mask.col_ptr[k + 1] = static_cast<int>(mask.row_idx.size());
  }
  return mask;
}

const SparseObservation& SampleSplit::subset(int i) const {
  if (i < 0 || i >= parts_) throw InvalidDimensions("SampleSplit: subset index out of range");
  return mode_ == SplitMode::reuse ? parent_ : subsets_[i];
}

SampleSplit SampleSplit::make_reuse(const SparseObservation& parent, int parts) {
  if (parts < 1) throw InvalidDimensions("SampleSplit: parts must be >= 1");
  SampleSplit s;
  s.mode_ = SplitMode::reuse;
  s.parts_ = parts;
  s.parent_ = parent;
  return s;
}

SampleSplit SampleSplit::make_split(const SparseObservation& parent, int parts,
                                    std::uint64_t seed) {
  if (parts < 1) throw InvalidDimensions("SampleSplit: parts must be >= 1");
  Prng rng(seed, RngStream::split);
  SampleSplit s;
  s.mode_ = SplitMode::split;
  s.parts_ = parts;
  s.subsets_.resize(parts);

  const ObservationMask& pm = parent.mask;
  for (int part = 0; part < parts; ++part) {
    auto& sub = s.subsets_[part];
    sub.mask.n = pm.n;
    sub.mask.q = pm.q;
    sub.mask.p = pm.p / parts;
    sub.mask.col_ptr.assign(pm.q + 1, 0);
    sub.noise_level = parent.noise_level;
  }
  for (int k = 0; k < pm.q; ++k) {
    for (int idx = pm.col_ptr[k]; idx < pm.col_ptr[k + 1]; ++idx) {
      const int part = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(parts)));
      s.subsets_[part].mask.row_idx.push_back(pm.row_idx[idx]);
      s.subsets_[part].values.push_back(parent.values[idx]);
    }
    for (int part = 0; part < parts; ++part)
      s.subsets_[part].mask.col_ptr[k + 1] = static_cast<int>(s.subsets_[part].mask.row_idx.size());
  }
  return s;
}

SampleSplit split_mask(const SparseObservation& y, int parts, SplitMode mode, std::uint64_t seed) {
  return mode == SplitMode::reuse ? SampleSplit::make_reuse(y, parts)
                                  : SampleSplit::make_split(y, parts, seed);
}

SparseObservation observe(const GroundTruth& gt, const ObservationMask& mask, double eps_noise,
                          NoiseShape shape, std::uint64_t seed) {
  if (mask.n != gt.n || mask.q != gt.q) throw DimensionMismatch("observe: mask/gt shape mismatch");
  if (eps_noise < 0.0) throw InvalidDimensions("observe: eps_noise must be >= 0");
  Prng rng(seed, RngStream::noise);

  const Matrix b_star = gt.b_star();
  SparseObservation y;
  y.mask = mask;
  y.noise_level = eps_noise;
  y.values.resize(mask.row_idx.size());
  for (int k = 0; k < mask.q; ++k) {
    const Vector bk = b_star.col(k);
    for (int idx = mask.col_ptr[k]; idx < mask.col_ptr[k + 1]; ++idx) {
      double v = gt.u_star.matrix().row(mask.row_idx[idx]).dot(bk);
      if (eps_noise > 0.0) {
        const double s = (shape == NoiseShape::rademacher)
                             ? (rng.next_bernoulli(0.5) ? 1.0 : -1.0)
                             : rng.next_signed_unit();
        v *= 1.0 + eps_noise * s;
      }
      y.values[idx] = v;
    }
  }
  return y;
}

void accumulate_yyt_times(const SparseObservation& y, std::span<const int> cols, const Matrix& m,
                          Matrix& out) {
  const auto& mask = y.mask;
  const Eigen::Index r = m.cols();
  Eigen::RowVectorXd z(r);
  for (int k : cols) {
    z.setZero();
    for (int idx = mask.col_ptr[k]; idx < mask.col_ptr[k + 1]; ++idx)
      z += y.values[idx] * m.row(mask.row_idx[idx]);
    for (int idx = mask.col_ptr[k]; idx < mask.col_ptr[k + 1]; ++idx)
      out.row(mask.row_idx[idx]) += y.values[idx] * z;
  }
}

void accumulate_residual_gradient(const SparseObservation& y, std::span<const int> cols,
                                  const Matrix& u, const Matrix& b, Matrix& out) {
  const auto& mask = y.mask;
  for (int k : cols) {
    const auto bk = b.col(k);
    for (int idx = mask.col_ptr[k]; idx < mask.col_ptr[k + 1]; ++idx) {
      const int j = mask.row_idx[idx];
      const double resid = u.row(j).dot(bk) - y.values[idx];
      out.row(j) += (2.0 * resid) * bk.transpose();
    }
  }
}

void accumulate_residual_gradient_b(const SparseObservation& y, std::span<const int> cols,
                                    const Matrix& u, const Matrix& b, Matrix& out) {
  const auto& mask = y.mask;
  for (int k : cols) {
    const auto bk = b.col(k);
    for (int idx = mask.col_ptr[k]; idx < mask.col_ptr[k + 1]; ++idx) {
      const int j = mask.row_idx[idx];
      const double resid = u.row(j).dot(bk) - y.values[idx];
      out.col(k) += (2.0 * resid) * u.row(j).transpose();
    }
  }
}

RowMajorView row_major_view(const SparseObservation& y) {
  const auto& mask = y.mask;
  RowMajorView view;
  view.row_ptr.assign(mask.n + 1, 0);
  for (int idx : mask.row_idx) ++view.row_ptr[idx + 1];
  for (int j = 0; j < mask.n; ++j) view.row_ptr[j + 1] += view.row_ptr[j];
  view.col_idx.resize(mask.row_idx.size());
  view.value.resize(mask.row_idx.size());
  std::vector<int> cursor(view.row_ptr.begin(), view.row_ptr.end() - 1);
  for (int k = 0; k < mask.q; ++k)
    for (int idx = mask.col_ptr[k]; idx < mask.col_ptr[k + 1]; ++idx) {
      const int pos = cursor[mask.row_idx[idx]]++;
      view.col_idx[pos] = k;
      view.value[pos] = y.values[idx];
    }
  return view;
}

double masked_residual_sq(const SparseObservation& y, std::span<const int> cols, const Matrix& u,
                          const Matrix& b) {
  const auto& mask = y.mask;
  double total = 0.0;
  for (int k : cols) {
    const auto bk = b.col(k);
    for (int idx = mask.col_ptr[k]; idx < mask.col_ptr[k + 1]; ++idx) {
      const double resid = u.row(mask.row_idx[idx]).dot(bk) - y.values[idx];
      total += resid * resid;
    }
  }
  return total;
}

std::vector<int> all_columns(int q) {
  std::vector<int> cols(q);
  for (int k = 0; k < q; ++k) cols[k] = k;
  return cols;
}

LinearOperator observation_operator(const SparseObservation& y) {
  const int n = y.mask.n;
  const int q = y.mask.q;
  LinearOperator op;
  op.rows = n;
  op.cols = q;
  op.apply = [&y, n](const Matrix& m) {
    Matrix out = Matrix::Zero(n, m.cols());
    for (int k = 0; k < y.mask.q; ++k)
      for (int idx = y.mask.col_ptr[k]; idx < y.mask.col_ptr[k + 1]; ++idx)
        out.row(y.mask.row_idx[idx]) += y.values[idx] * m.row(k);
    return out;
  };
  op.apply_trans = [&y, q](const Matrix& m) {
    Matrix out = Matrix::Zero(q, m.cols());
    for (int k = 0; k < y.mask.q; ++k)
      for (int idx = y.mask.col_ptr[k]; idx < y.mask.col_ptr[k + 1]; ++idx)
        out.row(k) += y.values[idx] * m.row(y.mask.row_idx[idx]);
    return out;
  };
  op.apply_gram = [&y, n](const Matrix& m) {
    Matrix out = Matrix::Zero(n, m.cols());
    const std::vector<int> cols = all_columns(y.mask.q);
    accumulate_yyt_times(y, cols, m, out);
    return out;
  };
  return op;
}

// --- serialization -----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'F', 'L', 'R', 'M'};
constexpr std::uint16_t kVersion = 1;
constexpr std::uint16_t kTagGroundTruth = 1;
constexpr std::uint16_t kTagObservation = 2;

template <class T>
void write_pod(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T read_pod(std::istream& is) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw std::runtime_error("FLRM: truncated stream");
  return v;
}

void write_doubles(std::ostream& os, const double* data, std::size_t count) {
  os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 8));
}

void read_doubles(std::istream& is, double* data, std::size_t count) {
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * 8));
  if (!is) throw std::runtime_error("FLRM: truncated stream");
}

std::uint16_t read_header(std::istream& is) {
  char magic[4];
  is.read(magic, 4);
  if (!is || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("FLRM: bad magic bytes");
  if (read_pod<std::uint16_t>(is) != kVersion) throw std::runtime_error("FLRM: unknown version");
  return read_pod<std::uint16_t>(is);
}

std::ofstream open_out(const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  return os;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open for reading: " + path);
  return is;
}

}  // namespace

void save_ground_truth(const GroundTruth& gt, const std::string& path) {
  auto os = open_out(path);
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, kTagGroundTruth);
  write_pod<std::uint32_t>(os, gt.n);
  write_pod<std::uint32_t>(os, gt.q);
  write_pod<std::uint32_t>(os, gt.r);
  write_doubles(os, gt.u_star.matrix().data(), static_cast<std::size_t>(gt.n) * gt.r);
  write_doubles(os, gt.sigma_star.data(), gt.r);
  write_doubles(os, gt.v_star.matrix().data(), static_cast<std::size_t>(gt.q) * gt.r);
  write_pod(os, gt.mu);
  write_pod(os, gt.kappa);
}

GroundTruth load_ground_truth(const std::string& path) {
  auto is = open_in(path);
  if (read_header(is) != kTagGroundTruth) throw std::runtime_error("FLRM: not a ground truth file");
  GroundTruth gt;
  gt.n = static_cast<int>(read_pod<std::uint32_t>(is));
  gt.q = static_cast<int>(read_pod<std::uint32_t>(is));
  gt.r = static_cast<int>(read_pod<std::uint32_t>(is));
  Matrix u(gt.n, gt.r);
  read_doubles(is, u.data(), static_cast<std::size_t>(gt.n) * gt.r);
  gt.u_star = OrthonormalBasis(std::move(u));
  gt.sigma_star = Vector(gt.r);
  read_doubles(is, gt.sigma_star.data(), gt.r);
  Matrix v(gt.q, gt.r);
  read_doubles(is, v.data(), static_cast<std::size_t>(gt.q) * gt.r);
  gt.v_star = OrthonormalBasis(std::move(v));
  gt.mu = read_pod<double>(is);
  gt.kappa = read_pod<double>(is);
  return gt;
}

void save_observation(const SparseObservation& y, const std::string& path) {
  auto os = open_out(path);
  os.write(kMagic, 4);
  write_pod(os, kVersion);
  write_pod(os, kTagObservation);
  write_pod<std::uint32_t>(os, y.mask.n);
  write_pod<std::uint32_t>(os, y.mask.q);
  write_pod(os, y.mask.p);
  write_pod(os, y.noise_level);
  write_pod<std::uint64_t>(os, y.values.size());
  for (int v : y.mask.col_ptr) write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(v));
  for (int v : y.mask.row_idx) write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(v));
  write_doubles(os, y.values.data(), y.values.size());
}

SparseObservation load_observation(const std::string& path) {
  auto is = open_in(path);
  if (read_header(is) != kTagObservation) throw std::runtime_error("FLRM: not an observation file");
  SparseObservation y;
  y.mask.n = static_cast<int>(read_pod<std::uint32_t>(is));
  y.mask.q = static_cast<int>(read_pod<std::uint32_t>(is));
  y.mask.p = read_pod<double>(is);
  y.noise_level = read_pod<double>(is);
  const auto nnz = read_pod<std::uint64_t>(is);
  y.mask.col_ptr.resize(y.mask.q + 1);
  for (auto& v : y.mask.col_ptr) v = static_cast<int>(read_pod<std::uint32_t>(is));
  y.mask.row_idx.resize(nnz);
  for (auto& v : y.mask.row_idx) v = static_cast<int>(read_pod<std::uint32_t>(is));
  y.values.resize(nnz);
  read_doubles(is, y.values.data(), nnz);
  return y;
}

std::string debug_text(const GroundTruth& gt) {
  std::ostringstream os;
  os << "GroundTruth n=" << gt.n << " q=" << gt.q << " r=" << gt.r << " mu=" << gt.mu
     << " kappa=" << gt.kappa << "\nsigma_star:";
  for (int i = 0; i < gt.r; ++i) os << ' ' << gt.sigma_star(i);
  os << '\n';
  return os.str();
}

std::string debug_text(const SparseObservation& y) {
  std::ostringstream os;
  os << "SparseObservation n=" << y.mask.n << " q=" << y.mask.q << " p=" << y.mask.p
     << " eps_noise=" << y.noise_level << " nnz=" << y.mask.total_observed() << '\n';
  for (int k = 0; k < y.mask.q; ++k)
    for (int idx = y.mask.col_ptr[k]; idx < y.mask.col_ptr[k + 1]; ++idx)
      os << y.mask.row_idx[idx] << ',' << k << ',' << y.values[idx] << '\n';
  return os.str();
}

}  // namespace fedlrmc
