#include "fiberlearn/emd.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fiberlearn {

namespace {

double checked_sum(const std::vector<double>& v, const char* what) {
    double s = 0.0;
    for (double x : v) {
        if (!std::isfinite(x) || x < 0.0) throw ConfigError(std::string(what) + " masses must be finite and non-negative");
        s += x;
    }
    return s;
}

void rescale(std::vector<double>& v, const char* what) {
    const double s = checked_sum(v, what);
    if (std::abs(s - 1.0) > 1e-6) {
        throw ConfigError(std::string(what) + " masses sum to " + std::to_string(s) + ", expected 1");
    }
    for (double& x : v) x /= s;
}

struct Cell {
    std::size_t row;
    std::size_t col;
    double flow;
};

}  // namespace

void TransportInstance::validate() const {
    if (supply.empty() || demand.empty()) throw ConfigError("transport instance needs non-empty supply and demand");
    if (cost.size() != supply.size() * demand.size()) throw ConfigError("transport cost matrix has the wrong size");
    for (double c : cost) {
        if (!std::isfinite(c)) throw ConfigError("transport costs must be finite");
    }
    for (const auto* v : {&supply, &demand}) {
        const double s = checked_sum(*v, v == &supply ? "supply" : "demand");
        if (std::abs(s - 1.0) > 1e-6) throw ConfigError("transport masses must sum to 1, got " + std::to_string(s));
    }
}

TransportSolution solve_transport(TransportInstance inst) {
    inst.validate();
    rescale(inst.supply, "supply");
    rescale(inst.demand, "demand");
    const std::size_t R = inst.supply.size();
    const std::size_t C = inst.demand.size();
    const std::size_t N = R + C;
    const auto cost = [&](std::size_t i, std::size_t j) { return inst.cost[i * C + j]; };

    // Least-cost start. Every allocation closes exactly one line, so the
    // R + C - 1 cells form a spanning tree even under degeneracy.
    std::vector<std::size_t> order(R * C);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return inst.cost[a] < inst.cost[b]; });
    std::vector<double> ra = inst.supply;
    std::vector<double> rb = inst.demand;
    std::vector<char> row_open(R, 1);
    std::vector<char> col_open(C, 1);
    std::size_t open_rows = R;
    std::size_t open_cols = C;
    std::vector<Cell> basis;
    basis.reserve(N - 1);
    for (std::size_t idx : order) {
        if (open_rows + open_cols <= 1) break;
        const std::size_t i = idx / C;
        const std::size_t j = idx % C;
        if (!row_open[i] || !col_open[j]) continue;
        bool close_row;
        if (open_rows == 1 && open_cols > 1) {
            close_row = false;
        } else if (open_cols == 1 && open_rows > 1) {
            close_row = true;
        } else {
            close_row = ra[i] <= rb[j];
        }
        const double f = close_row ? ra[i] : rb[j];
        basis.push_back({i, j, f});
        ra[i] = std::max(0.0, ra[i] - f);
        rb[j] = std::max(0.0, rb[j] - f);
        if (close_row) {
            row_open[i] = 0;
            --open_rows;
        } else {
            col_open[j] = 0;
            --open_cols;
        }
    }
    if (basis.size() != N - 1) throw Error("transport start did not produce a spanning tree");

    TransportSolution sol;
    std::vector<double> u(R), v(C);
    std::vector<std::vector<std::size_t>> adj(N);
    std::vector<std::size_t> parent_edge(N), depth(N), stack;
    std::vector<char> seen(N);
    std::vector<char> is_basic(R * C, 0);
    for (const auto& c : basis) is_basic[c.row * C + c.col] = 1;

    double cmax = 0.0;
    for (double c : inst.cost) cmax = std::max(cmax, std::abs(c));
    const double tol = 1e-12 * std::max(1.0, cmax);
    const int max_pivots = static_cast<int>(50 * N * N + 1000);

    while (true) {
        // Potentials u_i + v_j = c_ij on the tree, rooted at row 0.
        for (auto& a : adj) a.clear();
        for (std::size_t e = 0; e < basis.size(); ++e) {
            adj[basis[e].row].push_back(e);
            adj[R + basis[e].col].push_back(e);
        }
        std::fill(seen.begin(), seen.end(), 0);
        u[0] = 0.0;
        seen[0] = 1;
        depth[0] = 0;
        stack.assign(1, 0);
        while (!stack.empty()) {
            const std::size_t node = stack.back();
            stack.pop_back();
            for (std::size_t e : adj[node]) {
                const Cell& c = basis[e];
                const std::size_t other = node < R ? R + c.col : c.row;
                if (seen[other]) continue;
                seen[other] = 1;
                parent_edge[other] = e;
                depth[other] = depth[node] + 1;
                if (other >= R) {
                    v[c.col] = cost(c.row, c.col) - u[c.row];
                } else {
                    u[c.row] = cost(c.row, c.col) - v[c.col];
                }
                stack.push_back(other);
            }
        }

        double best = -tol;
        std::size_t ei = R, ej = C;
        for (std::size_t i = 0; i < R; ++i) {
            for (std::size_t j = 0; j < C; ++j) {
                if (is_basic[i * C + j]) continue;
                const double r = cost(i, j) - u[i] - v[j];
                if (r < best) {
                    best = r;
                    ei = i;
                    ej = j;
                }
            }
        }
        if (ei == R) break;
        if (++sol.pivots > max_pivots) throw Error("transport simplex exceeded its pivot limit");

        // Tree path from row ei to column ej; edges alternate -, +, -, ...
        std::vector<std::size_t> from_a, from_b;
        std::size_t a = ei, b = R + ej;
        const auto up = [&](std::size_t node) {
            const Cell& c = basis[parent_edge[node]];
            return node < R ? R + c.col : c.row;
        };
        while (depth[a] > depth[b]) {
            from_a.push_back(parent_edge[a]);
            a = up(a);
        }
        while (depth[b] > depth[a]) {
            from_b.push_back(parent_edge[b]);
            b = up(b);
        }
        while (a != b) {
            from_a.push_back(parent_edge[a]);
            a = up(a);
            from_b.push_back(parent_edge[b]);
            b = up(b);
        }
        std::vector<std::size_t> path = from_a;
        path.insert(path.end(), from_b.rbegin(), from_b.rend());

        double theta = std::numeric_limits<double>::infinity();
        std::size_t leave = path.size();
        for (std::size_t k = 0; k < path.size(); k += 2) {
            if (basis[path[k]].flow < theta) {
                theta = basis[path[k]].flow;
                leave = k;
            }
        }
        for (std::size_t k = 0; k < path.size(); ++k) {
            double& f = basis[path[k]].flow;
            f = k % 2 == 0 ? std::max(0.0, f - theta) : f + theta;
        }
        const std::size_t le = path[leave];
        is_basic[basis[le].row * C + basis[le].col] = 0;
        basis[le] = {ei, ej, theta};
        is_basic[ei * C + ej] = 1;
    }

    sol.flow.assign(R * C, 0.0);
    for (const auto& c : basis) {
        sol.flow[c.row * C + c.col] = c.flow;
        sol.cost += c.flow * cost(c.row, c.col);
    }
    return sol;
}

namespace {

template <typename T>
std::vector<std::pair<std::size_t, double>> support(std::span<const T> p, std::size_t m, const char* what) {
    if (p.size() != m) throw ConfigError(std::string(what) + " has length " + std::to_string(p.size()) +
                                         " but the dictionary has " + std::to_string(m) + " atoms");
    double sum = 0.0;
    for (T x : p) {
        if (!std::isfinite(static_cast<double>(x)) || x < 0) {
            throw ConfigError(std::string(what) + " must be finite and non-negative");
        }
        sum += static_cast<double>(x);
    }
    if (!(sum > 0.0)) throw ConfigError(std::string(what) + " has zero total mass");
    std::vector<std::pair<std::size_t, double>> out;
    double kept = 0.0;
    for (std::size_t k = 0; k < m; ++k) {
        const double w = static_cast<double>(p[k]) / sum;
        if (w >= 1e-12) {
            out.emplace_back(k, w);
            kept += w;
        }
    }
    for (auto& [k, w] : out) w /= kept;
    return out;
}

template <typename T>
double emd_impl(const SphereDictionary& dict, std::span<const T> p, std::span<const T> q) {
    const auto sp = support(p, dict.size(), "first distribution");
    const auto sq = support(q, dict.size(), "second distribution");
    TransportInstance inst;
    for (const auto& [k, w] : sp) inst.supply.push_back(w);
    for (const auto& [k, w] : sq) inst.demand.push_back(w);
    inst.cost.reserve(sp.size() * sq.size());
    for (const auto& [i, wi] : sp) {
        for (const auto& [j, wj] : sq) {
            inst.cost.push_back(rad2deg(dict.angles(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
        }
    }
    return solve_transport(std::move(inst)).cost;
}

}  // namespace

double emd(const SphereDictionary& dict, std::span<const double> p, std::span<const double> q) {
    return emd_impl(dict, p, q);
}

double emd(const SphereDictionary& dict, std::span<const float> p, std::span<const float> q) {
    return emd_impl(dict, p, q);
}

}  // namespace fiberlearn
