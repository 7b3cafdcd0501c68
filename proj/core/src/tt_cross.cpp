#include "ttvi/tt_cross.hpp"

#include <Eigen/LU>
#include <Eigen/QR>
#include <Eigen/SVD>

#include <algorithm>
#include <cmath>
#include <set>

namespace ttvi {

namespace {

// m^e capped, for counting available multi-indices without overflow
Index pow_capped(Index m, Index e, Index cap = 1 << 30) {
  Index v = 1;
  for (Index i = 0; i < e; ++i) {
    if (v > cap / m) return cap;
    v *= m;
  }
  return v;
}

}  // namespace

std::vector<Index> maxvol(const Matrix& a, double delta) {
  const Index p = a.rows(), r = a.cols();
  if (p < r) throw DegeneracyError("maxvol: matrix has fewer rows than columns");
  const double scale = a.cwiseAbs().maxCoeff();
  if (scale == 0.0) throw DegeneracyError("maxvol: zero matrix");
  Matrix as = a / scale;

  // initialize from the row pivoting of a column-pivoted QR of A^T
  Eigen::ColPivHouseholderQR<Matrix> cp(as.transpose());
  std::vector<Index> sel(r);
  for (Index j = 0; j < r; ++j) sel[j] = cp.colsPermutation().indices()[j];

  Matrix ahat(r, r);
  auto rebuild = [&](Matrix& b) {
    for (Index j = 0; j < r; ++j) ahat.row(j) = as.row(sel[j]);
    Eigen::JacobiSVD<Matrix> svd(ahat);
    if (svd.singularValues()[r - 1] < 1e-12) {
      throw DegeneracyError("maxvol: selected submatrix numerically singular");
    }
    Eigen::PartialPivLU<Matrix> lu(ahat.transpose());
    b = lu.solve(as.transpose()).transpose();  // A * Ahat^{-1}
  };

  Matrix b;
  rebuild(b);
  for (int iter = 0; iter < 2000; ++iter) {
    // scan in index order so the lowest row index wins ties
    double best = 1.0 + delta;
    Index bi = -1, bj = -1;
    for (Index i = 0; i < p; ++i) {
      for (Index j = 0; j < r; ++j) {
        const double v = std::abs(b(i, j));
        if (v > best) {
          best = v;
          bi = i;
          bj = j;
        }
      }
    }
    if (bi < 0) break;
    sel[bj] = bi;
    rebuild(b);
  }
  std::sort(sel.begin(), sel.end());
  return sel;
}

namespace {

struct CrossState {
  Index d = 0, m = 0;
  std::vector<Index> rank;                     // bond ranks r_0..r_d
  std::vector<std::vector<MultiIndex>> left;   // prefixes, left[k].size() == rank[k]
  std::vector<std::vector<MultiIndex>> right;  // suffixes of length d-k
};

MultiIndex full_index(const MultiIndex& prefix, int i, const MultiIndex& suffix) {
  MultiIndex idx;
  idx.reserve(prefix.size() + 1 + suffix.size());
  idx.insert(idx.end(), prefix.begin(), prefix.end());
  idx.push_back(i);
  idx.insert(idx.end(), suffix.begin(), suffix.end());
  return idx;
}

void init_right_sets(CrossState& st, Rng& rng) {
  st.right.assign(st.d + 1, {});
  st.right[st.d] = {MultiIndex{}};
  for (Index k = st.d - 1; k >= 1; --k) {
    const Index len = st.d - k;
    std::set<MultiIndex> seen;
    std::vector<MultiIndex> out;
    int attempts = 0;
    while (static_cast<Index>(out.size()) < st.rank[k]) {
      MultiIndex s(len);
      for (Index j = 0; j < len; ++j) s[j] = static_cast<int>(rng.below(st.m));
      if (seen.insert(s).second) out.push_back(std::move(s));
      if (++attempts > 10000 * st.rank[k]) {
        throw DegeneracyError("tt-cross: cannot draw distinct index set at bond " +
                              std::to_string(k));
      }
    }
    st.right[k] = std::move(out);
  }
}

void extend_right_set(CrossState& st, Index k, Index new_size, Rng& rng) {
  const Index len = st.d - k;
  std::set<MultiIndex> seen(st.right[k].begin(), st.right[k].end());
  int attempts = 0;
  while (static_cast<Index>(st.right[k].size()) < new_size) {
    MultiIndex s(len);
    for (Index j = 0; j < len; ++j) s[j] = static_cast<int>(rng.below(st.m));
    if (seen.insert(s).second) st.right[k].push_back(std::move(s));
    if (++attempts > 10000 * new_size) break;  // index space exhausted; keep what we have
  }
}

// Column-equilibrated rank-revealing reduction of a fiber matrix. Returns the
// retained original-column indices (size = numerical rank) or throws when the
// fibers are identically zero.
std::vector<Index> prune_columns(const Matrix& f, const std::string& where) {
  const Index cols = f.cols();
  std::vector<Index> nonzero;
  for (Index j = 0; j < cols; ++j) {
    if (f.col(j).cwiseAbs().maxCoeff() > 0.0) nonzero.push_back(j);
  }
  if (nonzero.empty()) throw DegeneracyError("tt-cross: all fiber values are zero " + where);
  Matrix fs(f.rows(), static_cast<Index>(nonzero.size()));
  for (std::size_t j = 0; j < nonzero.size(); ++j) {
    const auto c = f.col(nonzero[j]);
    fs.col(static_cast<Index>(j)) = c / c.cwiseAbs().maxCoeff();
  }
  Eigen::ColPivHouseholderQR<Matrix> cp(fs);
  const Index maxr = std::min(fs.rows(), fs.cols());
  const double head = std::abs(cp.matrixR()(0, 0));
  Index rho = 0;
  for (Index i = 0; i < maxr; ++i) {
    if (std::abs(cp.matrixR()(i, i)) > 1e-12 * head) ++rho;
  }
  if (rho == 0) throw DegeneracyError("tt-cross: fiber matrix numerically zero " + where);
  // pivot order (strongest first), so callers can shrink from the tail
  std::vector<Index> keep(rho);
  for (Index j = 0; j < rho; ++j) keep[j] = nonzero[cp.colsPermutation().indices()[j]];
  return keep;
}

// Equilibrated column subset plus a maxvol row selection over it. The pivoted
// QR rank estimate can be optimistic on severely graded fibers (entries
// spanning hundreds of orders of magnitude), so on a singular selection the
// candidate set shrinks by its weakest pivot and the selection is retried.
struct SiteSelection {
  std::vector<Index> keep;  // retained original columns
  Matrix f2;                // equilibrated retained columns
  std::vector<Index> sel;   // maxvol rows of f2
};

SiteSelection select_site(const Matrix& f, const std::string& where) {
  SiteSelection out;
  out.keep = prune_columns(f, where);
  for (;;) {
    const Index rho = static_cast<Index>(out.keep.size());
    out.f2.resize(f.rows(), rho);
    for (Index j = 0; j < rho; ++j) {
      const auto col = f.col(out.keep[j]);
      out.f2.col(j) = col / col.cwiseAbs().maxCoeff();
    }
    try {
      out.sel = maxvol(out.f2);
      return out;
    } catch (const DegeneracyError& e) {
      if (rho <= 1) throw DegeneracyError(std::string(e.what()) + " " + where);
      out.keep.pop_back();
    }
  }
}

// Left-to-right half sweep; rebuilds the left sets and assembles all cores.
TensorTrain lr_sweep_assemble(const GridOracle& oracle, CrossState& st,
                              std::vector<FiberRecord>* records, int sweep_no) {
  const Index d = st.d, m = st.m;
  st.left.assign(d + 1, {});
  st.left[0] = {MultiIndex{}};
  st.rank[0] = st.rank[d] = 1;
  if (records) records->clear();

  std::vector<TtCore> cores(d);
  MultiIndex idx;
  for (Index c = 0; c < d; ++c) {
    const auto& lset = st.left[c];
    const auto& rset = st.right[c + 1];
    const Index rows = static_cast<Index>(lset.size()) * m;
    const Index cols = static_cast<Index>(rset.size());
    Matrix f(rows, cols);
    for (Index a = 0; a < static_cast<Index>(lset.size()); ++a) {
      for (Index i = 0; i < m; ++i) {
        for (Index b = 0; b < cols; ++b) {
          idx = full_index(lset[a], static_cast<int>(i), rset[b]);
          f(a * m + i, b) = oracle(idx);
        }
      }
    }

    const std::string where = "(sweep " + std::to_string(sweep_no) + ", site " +
                              std::to_string(c) + ")";
    if (c == d - 1) {
      // last core keeps raw fiber values
      TtCore core(st.rank[c], m, 1);
      core.right_unfold() = f;
      cores[c] = std::move(core);
      if (records) {
        for (Index a = 0; a < static_cast<Index>(lset.size()); ++a) {
          for (Index i = 0; i < m; ++i) {
            records->push_back({full_index(lset[a], static_cast<int>(i), rset[0]),
                                f(a * m + i, 0)});
          }
        }
      }
      break;
    }

    SiteSelection site = select_site(f, where);
    const std::vector<Index>& keep = site.keep;
    const std::vector<Index>& sel = site.sel;
    const Index rho = static_cast<Index>(keep.size());

    Matrix ahat(rho, rho);
    for (Index j = 0; j < rho; ++j) ahat.row(j) = site.f2.row(sel[j]);
    Eigen::PartialPivLU<Matrix> lu(ahat.transpose());
    Matrix core_mat = lu.solve(site.f2.transpose()).transpose();  // rows x rho

    TtCore core(st.rank[c], m, rho);
    core.right_unfold() = core_mat;
    cores[c] = std::move(core);

    // prune the right set to the retained columns and rebuild the left set
    std::vector<MultiIndex> new_rset(rho);
    for (Index j = 0; j < rho; ++j) new_rset[j] = rset[keep[j]];
    st.right[c + 1] = std::move(new_rset);
    std::vector<MultiIndex> new_lset(rho);
    for (Index j = 0; j < rho; ++j) {
      const Index a = sel[j] / m, i = sel[j] % m;
      new_lset[j] = st.left[c][a];
      new_lset[j].push_back(static_cast<int>(i));
    }
    st.left[c + 1] = std::move(new_lset);
    st.rank[c + 1] = rho;

    if (records) {
      for (Index a = 0; a < static_cast<Index>(lset.size()); ++a) {
        for (Index i = 0; i < m; ++i) {
          for (Index j = 0; j < rho; ++j) {
            records->push_back({full_index(lset[a], static_cast<int>(i), st.right[c + 1][j]),
                                f(a * m + i, keep[j])});
          }
        }
      }
    }
  }
  return TensorTrain(std::move(cores));
}

// Right-to-left half sweep; rebuilds the right index sets only.
void rl_sweep_sets(const GridOracle& oracle, CrossState& st, int sweep_no) {
  const Index d = st.d, m = st.m;
  MultiIndex idx;
  for (Index c = d - 1; c >= 1; --c) {
    const auto& lset = st.left[c];
    const auto& rset = st.right[c + 1];
    const Index nl = static_cast<Index>(lset.size());
    const Index nr = static_cast<Index>(rset.size());
    Matrix h(m * nr, nl);  // transpose of the site unfolding, columns = prefixes
    for (Index a = 0; a < nl; ++a) {
      for (Index i = 0; i < m; ++i) {
        for (Index b = 0; b < nr; ++b) {
          idx = full_index(lset[a], static_cast<int>(i), rset[b]);
          h(i * nr + b, a) = oracle(idx);
        }
      }
    }
    const std::string where = "(sweep " + std::to_string(sweep_no) + ", site " +
                              std::to_string(c) + ", rl)";
    SiteSelection site = select_site(h, where);
    const std::vector<Index>& keep = site.keep;
    const std::vector<Index>& sel = site.sel;
    const Index rho = static_cast<Index>(keep.size());
    std::vector<MultiIndex> new_rset(rho);
    for (Index j = 0; j < rho; ++j) {
      const Index i = sel[j] / nr, b = sel[j] % nr;
      new_rset[j] = MultiIndex{static_cast<int>(i)};
      new_rset[j].insert(new_rset[j].end(), rset[b].begin(), rset[b].end());
    }
    st.right[c] = std::move(new_rset);
    st.rank[c] = rho;
    // the left set pruning implied by `keep` matters only for consistency of
    // the next sweep's fiber rows; the sets are rebuilt there anyway
    if (rho < nl) {
      std::vector<MultiIndex> new_lset(rho);
      for (Index j = 0; j < rho; ++j) new_lset[j] = lset[keep[j]];
      st.left[c] = std::move(new_lset);
    }
  }
}

TensorTrain single_mode_train(const GridOracle& oracle) {
  TtCore core(1, oracle.grid_size(), 1);
  MultiIndex idx(1);
  for (Index i = 0; i < oracle.grid_size(); ++i) {
    idx[0] = static_cast<int>(i);
    core.at(0, i, 0) = oracle(idx);
  }
  return TensorTrain({std::move(core)});
}

std::vector<MultiIndex> probe_set(Index d, Index m, Index count, Rng& rng) {
  std::vector<MultiIndex> probes(count, MultiIndex(d));
  for (auto& p : probes) {
    for (Index j = 0; j < d; ++j) p[j] = static_cast<int>(rng.below(m));
  }
  return probes;
}

}  // namespace

CrossResult cross_approximate(const GridOracle& oracle, const CrossConfig& cfg) {
  if (cfg.max_rank < 1 || cfg.n_sweeps < 1 || cfg.rel_tol <= 0.0) {
    throw ConfigError("invalid cross configuration");
  }
  const Index d = oracle.dims(), m = oracle.grid_size();
  const long long evals0 = oracle.eval_count();

  CrossResult res;
  if (d == 1) {
    res.tt = single_mode_train(oracle);
    res.oracle_evals = oracle.eval_count() - evals0;
    res.sweeps_run = 1;
    res.converged = true;
    res.ranks = {1, 1};
    return res;
  }

  CrossState st;
  st.d = d;
  st.m = m;
  st.rank.assign(d + 1, 1);
  for (Index k = 1; k < d; ++k) {
    st.rank[k] = std::min(cfg.max_rank, pow_capped(m, std::min(k, d - k)));
  }
  Rng rng(mix_seed(cfg.seed, 0x5eedc405));
  init_right_sets(st, rng);

  Rng probe_rng(mix_seed(cfg.seed, 0x9b0be5));
  const auto probes = probe_set(d, m, 1000, probe_rng);
  Vector prev_vals;

  for (int sweep = 1; sweep <= cfg.n_sweeps; ++sweep) {
    res.tt = lr_sweep_assemble(oracle, st, cfg.record_fibers ? &res.fibers : nullptr, sweep);
    res.sweeps_run = sweep;

    Vector vals(static_cast<Index>(probes.size()));
    for (std::size_t i = 0; i < probes.size(); ++i) {
      vals[static_cast<Index>(i)] = res.tt.eval(probes[i]);
    }
    if (prev_vals.size() > 0) {
      double change = 0.0;
      for (Index i = 0; i < vals.size(); ++i) {
        const double ref = std::max(std::abs(prev_vals[i]), 1e-300);
        change = std::max(change, std::abs(vals[i] - prev_vals[i]) / ref);
      }
      if (change <= cfg.rel_tol) {
        res.converged = true;
        break;
      }
    }
    prev_vals = std::move(vals);
    if (sweep == cfg.n_sweeps) break;
    rl_sweep_sets(oracle, st, sweep);
  }
  res.ranks = st.rank;
  res.oracle_evals = oracle.eval_count() - evals0;
  return res;
}

CrossResult reference_cross(const GridOracle& oracle, double rel_tol, Index rank_cap,
                            std::uint64_t seed, int max_sweeps) {
  const Index d = oracle.dims(), m = oracle.grid_size();
  const long long evals0 = oracle.eval_count();

  CrossResult res;
  if (d == 1) {
    res.tt = single_mode_train(oracle);
    res.oracle_evals = oracle.eval_count() - evals0;
    res.sweeps_run = 1;
    res.converged = true;
    res.ranks = {1, 1};
    return res;
  }

  CrossState st;
  st.d = d;
  st.m = m;
  st.rank.assign(d + 1, 1);
  Rng rng(mix_seed(seed, 0xefc0de5));
  init_right_sets(st, rng);

  // Convergence is the l2-relative residual of the assembled train on a fresh
  // random probe set each sweep. Measuring at the cross fibers themselves
  // would be blind: the interpolant is exact there by construction.
  auto probe_residual = [&](const TensorTrain& tt, int sweep) {
    Rng prng(mix_seed(seed, 0x9b0be5 + static_cast<std::uint64_t>(sweep)));
    const auto probes = probe_set(d, m, 512, prng);
    double num = 0.0, den = 0.0;
    for (const auto& p : probes) {
      const double truth = oracle(p);
      const double pred = tt.eval(p);
      num += (pred - truth) * (pred - truth);
      den += truth * truth;
    }
    return den > 0.0 ? std::sqrt(num / den) : (num > 0.0 ? 1.0 : 0.0);
  };

  int stalled = 0;
  for (int sweep = 1; sweep <= max_sweeps; ++sweep) {
    res.tt = lr_sweep_assemble(oracle, st, nullptr, sweep);
    res.sweeps_run = sweep;

    if (probe_residual(res.tt, sweep) <= rel_tol) {
      res.converged = true;
      break;
    }
    if (sweep == max_sweeps) break;

    rl_sweep_sets(oracle, st, sweep);

    // grow every interior bond; the rank-revealing pruning in the next sweep
    // trims bonds whose numerical rank is already saturated
    bool grew = false;
    for (Index k = 1; k <= d - 1; ++k) {
      const Index cap = std::min(rank_cap, pow_capped(m, std::min(k, d - k)));
      const Index cur = static_cast<Index>(st.right[k].size());
      const Index want = std::min(cap, cur + std::max<Index>(1, cur / 2));
      if (want > cur) extend_right_set(st, k, want, rng);
      st.rank[k] = static_cast<Index>(st.right[k].size());
      if (st.rank[k] > cur) grew = true;
      if (st.rank[k] >= rank_cap) res.rank_cap_hit = true;
    }
    if (!grew) {
      if (++stalled >= 2) break;
    } else {
      stalled = 0;
    }
  }
  if (res.converged) res.rank_cap_hit = false;
  res.ranks = st.rank;
  res.oracle_evals = oracle.eval_count() - evals0;
  return res;
}

}  // namespace ttvi
