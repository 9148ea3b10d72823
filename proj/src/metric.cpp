#include "zeus/metric.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <thread>

namespace zeus {

double DistanceMatrix::max_value() const {
    double m = 0.0;
    for (double v : d) m = std::max(m, v);
    return m;
}

double DistanceMatrix::max_asymmetry() const {
    double m = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) m = std::max(m, std::abs((*this)(i, j) - (*this)(j, i)));
    return m;
}

double DistanceMatrix::max_diagonal() const {
    double m = 0.0;
    for (int i = 0; i < n; ++i) m = std::max(m, std::abs((*this)(i, i)));
    return m;
}

double DistanceMatrix::min_entry() const {
    double m = 0.0;
    for (double v : d) m = std::min(m, v);
    return m;
}

double DistanceMatrix::max_triangle_violation() const {
    double worst = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            if (j == i) continue;
            for (int k = 0; k < n; ++k)
                worst = std::max(worst, (*this)(i, k) - ((*this)(i, j) + (*this)(j, k)));
        }
    return worst;
}

// ---------------------------------------------------------------------------
// Transportation simplex.
//
// Minimizes sum_ij flow_ij * cost_ij subject to row sums = supply and column
// sums = demand. The basis is kept as m+n-1 cells forming a spanning tree of
// the bipartite row/column graph; entering cells follow Bland's rule (first
// negative reduced cost in row-major order) and ties in the leaving cell are
// broken lexicographically, which prevents cycling under degeneracy.

namespace {

struct BasicCell {
    int i;
    int j;
    double flow;
};

class TransportSolver {
public:
    double solve(const std::vector<double>& supply, const std::vector<double>& demand,
                 const std::vector<double>& cost) {
        const int m = static_cast<int>(supply.size());
        const int n = static_cast<int>(demand.size());
        if (m == 0 || n == 0) throw std::invalid_argument("transport: empty marginal");
        if (cost.size() != static_cast<std::size_t>(m) * n)
            throw std::invalid_argument("transport: cost matrix has wrong size");

        if (m == 1) {
            double total = 0.0;
            for (int j = 0; j < n; ++j) total += demand[j] * cost[j];
            return total;
        }
        if (n == 1) {
            double total = 0.0;
            for (int i = 0; i < m; ++i) total += supply[i] * cost[i];
            return total;
        }

        basis_.clear();
        northwest_corner(supply, demand, m, n);

        double cost_scale = 0.0;
        for (double c : cost) cost_scale = std::max(cost_scale, std::abs(c));
        const double eps = 1e-13 * (1.0 + cost_scale);

        u_.assign(m, 0.0);
        v_.assign(n, 0.0);
        const long max_pivots = 50L * (static_cast<long>(m) * n + 16);
        long pivot = 0;
        for (; pivot < max_pivots; ++pivot) {
            compute_duals(m, n, cost);

            int ei = -1, ej = -1;
            for (int i = 0; i < m && ei < 0; ++i)
                for (int j = 0; j < n; ++j) {
                    if (cost[static_cast<std::size_t>(i) * n + j] - u_[i] - v_[j] < -eps) {
                        ei = i;
                        ej = j;
                        break;
                    }
                }
            if (ei < 0) break; // optimal

            pivot_step(m, n, ei, ej);
        }
        if (pivot == max_pivots)
            throw std::runtime_error("transport: pivot limit exceeded, solver is cycling");

        double total = 0.0;
        for (const auto& cell : basis_)
            total += cell.flow * cost[static_cast<std::size_t>(cell.i) * n + cell.j];
        return total;
    }

private:
    void northwest_corner(const std::vector<double>& supply, const std::vector<double>& demand,
                          int m, int n) {
        int i = 0, j = 0;
        double a = supply[0], b = demand[0];
        while (true) {
            const double flow = std::min(a, b);
            basis_.push_back({i, j, std::max(flow, 0.0)});
            if (i == m - 1 && j == n - 1) break;
            if (a <= b && i < m - 1) {
                b -= a;
                ++i;
                a = supply[i];
            } else if (j < n - 1) {
                a -= b;
                ++j;
                b = demand[j];
            } else {
                b -= a;
                ++i;
                a = supply[i];
            }
        }
    }

    // Node ids: rows 0..m-1, columns m..m+n-1. The basis edges form a tree.
    void build_adjacency(int m, int n) {
        adj_.assign(static_cast<std::size_t>(m) + n, {});
        for (int e = 0; e < static_cast<int>(basis_.size()); ++e) {
            adj_[basis_[e].i].push_back(e);
            adj_[static_cast<std::size_t>(m) + basis_[e].j].push_back(e);
        }
    }

    void compute_duals(int m, int n, const std::vector<double>& cost) {
        build_adjacency(m, n);
        visited_.assign(static_cast<std::size_t>(m) + n, false);
        stack_.clear();
        stack_.push_back(0);
        visited_[0] = true;
        u_[0] = 0.0;
        while (!stack_.empty()) {
            const int node = stack_.back();
            stack_.pop_back();
            for (int e : adj_[node]) {
                const auto& cell = basis_[e];
                const int other = (node == cell.i) ? m + cell.j : cell.i;
                if (visited_[other]) continue;
                visited_[other] = true;
                const double c = cost[static_cast<std::size_t>(cell.i) * n + cell.j];
                if (other >= m)
                    v_[other - m] = c - u_[cell.i];
                else
                    u_[other] = c - v_[cell.j];
                stack_.push_back(other);
            }
        }
    }

    void pivot_step(int m, int n, int ei, int ej) {
        // Path through the basis tree from the entering row node to the
        // entering column node; with the entering cell it closes a cycle.
        build_adjacency(m, n);
        const int total_nodes = m + n;
        parent_edge_.assign(total_nodes, -1);
        parent_node_.assign(total_nodes, -1);
        visited_.assign(total_nodes, false);
        stack_.clear();
        stack_.push_back(ei);
        visited_[ei] = true;
        while (!stack_.empty()) {
            const int node = stack_.back();
            stack_.pop_back();
            if (node == m + ej) break;
            for (int e : adj_[node]) {
                const auto& cell = basis_[e];
                const int other = (node == cell.i) ? m + cell.j : cell.i;
                if (visited_[other]) continue;
                visited_[other] = true;
                parent_edge_[other] = e;
                parent_node_[other] = node;
                stack_.push_back(other);
            }
        }

        // Walk back from the column node; edges alternate -,+,-,... starting
        // and ending with -, matching flow conservation around the cycle.
        minus_edges_.clear();
        plus_edges_.clear();
        int node = m + ej;
        bool minus = true;
        while (node != ei) {
            const int e = parent_edge_[node];
            if (minus)
                minus_edges_.push_back(e);
            else
                plus_edges_.push_back(e);
            minus = !minus;
            node = parent_node_[node];
        }

        double theta = basis_[minus_edges_[0]].flow;
        int leaving = minus_edges_[0];
        for (int e : minus_edges_) {
            const auto& cell = basis_[e];
            const auto& best = basis_[leaving];
            if (cell.flow < theta - 0.0 ||
                (cell.flow == theta && (cell.i < best.i || (cell.i == best.i && cell.j < best.j)))) {
                theta = std::min(theta, cell.flow);
                leaving = e;
            }
        }
        theta = basis_[leaving].flow;

        for (int e : minus_edges_) basis_[e].flow -= theta;
        for (int e : plus_edges_) basis_[e].flow += theta;
        basis_[leaving] = {ei, ej, theta};
    }

    std::vector<BasicCell> basis_;
    std::vector<std::vector<int>> adj_;
    std::vector<double> u_, v_;
    std::vector<bool> visited_;
    std::vector<int> stack_, parent_edge_, parent_node_;
    std::vector<int> minus_edges_, plus_edges_;
};

thread_local TransportSolver tl_solver;

// Sparse (support-compressed) transition row.
struct SparseRow {
    std::vector<int> idx;
    std::vector<double> w;
};

std::vector<SparseRow> compress_rows(const TabularMDP& mdp) {
    const int ns = mdp.n_states();
    const int na = mdp.n_actions();
    std::vector<SparseRow> rows(static_cast<std::size_t>(ns) * na);
    for (int s = 0; s < ns; ++s)
        for (int a = 0; a < na; ++a) {
            const double* t = mdp.transition_row(s, a);
            auto& row = rows[static_cast<std::size_t>(s) * na + a];
            for (int s2 = 0; s2 < ns; ++s2)
                if (t[s2] > 0.0) {
                    row.idx.push_back(s2);
                    row.w.push_back(t[s2]);
                }
        }
    return rows;
}

double wasserstein_sparse(const SparseRow& p, const SparseRow& q, const DistanceMatrix& ground) {
    if (p.idx == q.idx && p.w == q.w) return 0.0;
    if (p.idx.size() == 1 && q.idx.size() == 1) return ground(p.idx[0], q.idx[0]);

    const int m = static_cast<int>(p.idx.size());
    const int n = static_cast<int>(q.idx.size());
    thread_local std::vector<double> cost;
    cost.resize(static_cast<std::size_t>(m) * n);
    for (int a = 0; a < m; ++a)
        for (int b = 0; b < n; ++b)
            cost[static_cast<std::size_t>(a) * n + b] = ground(p.idx[a], q.idx[b]);
    return tl_solver.solve(p.w, q.w, cost);
}

} // namespace

double solve_transport(const std::vector<double>& supply, const std::vector<double>& demand,
                       const std::vector<double>& cost) {
    TransportSolver solver;
    return solver.solve(supply, demand, cost);
}

double wasserstein_discrete(const std::vector<double>& p, const std::vector<double>& q,
                            const DistanceMatrix& ground) {
    const std::size_t n = static_cast<std::size_t>(ground.n);
    if (p.size() != n || q.size() != n)
        throw std::invalid_argument("wasserstein_discrete: marginal size does not match ground metric");
    double sp = 0.0, sq = 0.0;
    for (double v : p) {
        if (v < 0.0) throw std::invalid_argument("wasserstein_discrete: negative mass in p");
        sp += v;
    }
    for (double v : q) {
        if (v < 0.0) throw std::invalid_argument("wasserstein_discrete: negative mass in q");
        sq += v;
    }
    if (std::abs(sp - 1.0) > 1e-12 || std::abs(sq - 1.0) > 1e-12)
        throw std::invalid_argument("wasserstein_discrete: inputs are not probability vectors");

    if (p == q) return 0.0;

    SparseRow ps, qs;
    for (std::size_t i = 0; i < n; ++i)
        if (p[i] > 0.0) {
            ps.idx.push_back(static_cast<int>(i));
            ps.w.push_back(p[i] / sp);
        }
    for (std::size_t i = 0; i < n; ++i)
        if (q[i] > 0.0) {
            qs.idx.push_back(static_cast<int>(i));
            qs.w.push_back(q[i] / sq);
        }
    return wasserstein_sparse(ps, qs, ground);
}

// ---------------------------------------------------------------------------
// Bisimulation metric.

namespace {

void apply_bisim_operator(const TabularMDP& mdp, const std::vector<SparseRow>& rows,
                          const DistanceMatrix& d, DistanceMatrix& out, int n_threads) {
    const int ns = mdp.n_states();
    const int na = mdp.n_actions();
    const double gamma = mdp.gamma();
    const long n_pairs = static_cast<long>(ns) * (ns - 1) / 2;

    auto pair_of = [ns](long k) {
        // Inverse of the row-major upper-triangle linearization.
        int i = 0;
        long offset = 0;
        long row_len = ns - 1;
        while (k >= offset + row_len) {
            offset += row_len;
            --row_len;
            ++i;
        }
        const int j = static_cast<int>(i + 1 + (k - offset));
        return std::pair<int, int>(i, j);
    };

    auto work = [&](long lo, long hi) {
        if (lo >= hi) return;
        auto [i, j] = pair_of(lo);
        for (long k = lo; k < hi; ++k) {
            double best = 0.0;
            for (int a = 0; a < na; ++a) {
                const double dr = std::abs(mdp.reward(i, a) - mdp.reward(j, a));
                const double w = wasserstein_sparse(rows[static_cast<std::size_t>(i) * na + a],
                                                    rows[static_cast<std::size_t>(j) * na + a], d);
                best = std::max(best, dr + gamma * w);
            }
            out.at(i, j) = best;
            out.at(j, i) = best;
            ++j;
            if (j == ns) {
                ++i;
                j = i + 1;
            }
        }
    };

    for (int i = 0; i < ns; ++i) out.at(i, i) = 0.0;

    int threads = n_threads > 0 ? n_threads : static_cast<int>(std::thread::hardware_concurrency());
    threads = std::max(1, static_cast<int>(std::min<long>(threads, n_pairs)));
    if (threads <= 1 || n_pairs < 64) {
        work(0, n_pairs);
        return;
    }
    // Fixed partition: the result is identical for any worker count because
    // every pair is written to its own slot.
    std::vector<std::thread> pool;
    const long chunk = (n_pairs + threads - 1) / threads;
    for (int t = 0; t < threads; ++t) {
        const long lo = t * chunk;
        const long hi = std::min(n_pairs, lo + chunk);
        pool.emplace_back(work, lo, hi);
    }
    for (auto& th : pool) th.join();
}

} // namespace

DistanceMatrix bisim_operator(const TabularMDP& mdp, const DistanceMatrix& d, int n_threads) {
    if (d.n != mdp.n_states())
        throw std::invalid_argument("bisim_operator: metric size does not match the MDP");
    const auto rows = compress_rows(mdp);
    DistanceMatrix next(mdp.n_states());
    apply_bisim_operator(mdp, rows, d, next, n_threads);
    return next;
}

DistanceMatrix bisim_metric(const TabularMDP& mdp, double tol, int n_threads) {
    if (!(tol > 0.0)) throw std::invalid_argument("bisim_metric: tol must be positive");
    const int ns = mdp.n_states();
    const double gamma = mdp.gamma();
    const auto rows = compress_rows(mdp);

    DistanceMatrix d(ns);
    DistanceMatrix next(ns);

    long cap = 2;
    if (gamma > 0.0) {
        const double d_max = 1.0 / (1.0 - gamma);
        cap = static_cast<long>(std::ceil(std::log(tol * (1.0 - gamma) / d_max) / std::log(gamma))) + 2;
        cap = std::max(cap, 2L);
    }

    for (long iter = 0; iter < cap; ++iter) {
        apply_bisim_operator(mdp, rows, d, next, n_threads);
        double residual = 0.0;
        for (std::size_t k = 0; k < d.d.size(); ++k)
            residual = std::max(residual, std::abs(next.d[k] - d.d[k]));
        d.d.swap(next.d);
        if (residual <= tol) break;
    }
    return d;
}

// ---------------------------------------------------------------------------
// Super-MDP and the task metric.

SuperMDP build_super_mdp(const ContextualFamily& family, const std::vector<ContextVector>& contexts) {
    if (!family.tabular())
        throw std::invalid_argument("build_super_mdp: family '" + family.id() + "' is not tabular");
    if (contexts.empty()) throw std::invalid_argument("build_super_mdp: no contexts given");

    std::vector<TabularMDP> blocks;
    blocks.reserve(contexts.size());
    for (const auto& c : contexts) blocks.push_back(family.make_mdp(c));

    const int nb = blocks[0].n_states();
    const int na = blocks[0].n_actions();
    const double gamma = blocks[0].gamma();
    for (const auto& b : blocks)
        if (b.n_states() != nb || b.n_actions() != na || b.gamma() != gamma)
            throw std::invalid_argument("build_super_mdp: context instances have mismatched shapes");

    const int nc = static_cast<int>(contexts.size());
    const int ns = nc * nb;
    std::vector<double> transition(static_cast<std::size_t>(ns) * na * ns, 0.0);
    std::vector<double> reward(static_cast<std::size_t>(ns) * na, 0.0);
    for (int c = 0; c < nc; ++c) {
        for (int s = 0; s < nb; ++s) {
            const int super = c * nb + s;
            for (int a = 0; a < na; ++a) {
                const double* row = blocks[c].transition_row(s, a);
                double* out = transition.data() + (static_cast<std::size_t>(super) * na + a) * ns;
                for (int s2 = 0; s2 < nb; ++s2) out[c * nb + s2] = row[s2];
                reward[static_cast<std::size_t>(super) * na + a] = blocks[c].reward(s, a);
            }
        }
    }
    return SuperMDP(TabularMDP(ns, na, std::move(transition), std::move(reward), gamma), nc, nb);
}

TaskMetricResult task_metric_full(const ContextualFamily& family,
                                  const std::vector<ContextVector>& contexts, double tol,
                                  int n_threads) {
    const SuperMDP super = build_super_mdp(family, contexts);
    TaskMetricResult result;
    result.over_super_states = bisim_metric(super.mdp, tol, n_threads);

    const int nc = super.n_contexts;
    result.over_contexts = DistanceMatrix(nc);
    for (int i = 0; i < nc; ++i)
        for (int j = i + 1; j < nc; ++j) {
            double worst = 0.0;
            for (int s = 0; s < super.n_base_states; ++s)
                worst = std::max(worst, result.over_super_states(super.super_index(i, s),
                                                                 super.super_index(j, s)));
            result.over_contexts.set_symmetric(i, j, worst);
        }
    return result;
}

DistanceMatrix task_metric(const ContextualFamily& family, const std::vector<ContextVector>& contexts,
                           double tol, int n_threads) {
    return task_metric_full(family, contexts, tol, n_threads).over_contexts;
}

LipschitzConstants fit_lipschitz_constants(const ContextualFamily& family,
                                           const std::vector<ContextVector>& contexts) {
    if (!family.tabular())
        throw std::invalid_argument("fit_lipschitz_constants: family '" + family.id() + "' is not tabular");
    if (contexts.size() < 2)
        throw std::invalid_argument("fit_lipschitz_constants: constants are undefined for fewer than two contexts");

    std::vector<TabularMDP> blocks;
    blocks.reserve(contexts.size());
    for (const auto& c : contexts) blocks.push_back(family.make_mdp(c));

    const int ns = blocks[0].n_states();
    const int na = blocks[0].n_actions();
    LipschitzConstants fit;
    for (std::size_t i = 0; i < contexts.size(); ++i) {
        for (std::size_t j = i + 1; j < contexts.size(); ++j) {
            const double dc = l1_distance(contexts[i], contexts[j]);
            if (dc == 0.0) continue; // pure generators make duplicates identical
            for (int s = 0; s < ns; ++s) {
                for (int a = 0; a < na; ++a) {
                    const double dr = std::abs(blocks[i].reward(s, a) - blocks[j].reward(s, a));
                    fit.lr = std::max(fit.lr, dr / dc);
                    // Wasserstein under the discrete ground metric is total
                    // variation: half the L1 gap between the rows.
                    const double* ti = blocks[i].transition_row(s, a);
                    const double* tj = blocks[j].transition_row(s, a);
                    double l1 = 0.0;
                    for (int s2 = 0; s2 < ns; ++s2) l1 += std::abs(ti[s2] - tj[s2]);
                    fit.lp = std::max(fit.lp, 0.5 * l1 / dc);
                }
            }
        }
    }
    return fit;
}

} // namespace zeus
