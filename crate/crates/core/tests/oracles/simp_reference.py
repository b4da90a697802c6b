"""Reference SIMP compliance minimization (99-line procedure, sensitivity filter, OC update).

Used only to produce frozen expected values for the Rust tests. Run with:

    python3 simp_reference.py
"""
import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.linalg import spsolve


def lk(nu=0.3):
    k = np.array([1/2 - nu/6, 1/8 + nu/8, -1/4 - nu/12, -1/8 + 3*nu/8,
                  -1/4 + nu/12, -1/8 - nu/8, nu/6, 1/8 - 3*nu/8])
    idx = [[0, 1, 2, 3, 4, 5, 6, 7],
           [1, 0, 7, 6, 5, 4, 3, 2],
           [2, 7, 0, 5, 6, 3, 4, 1],
           [3, 6, 5, 0, 7, 2, 1, 4],
           [4, 5, 6, 7, 0, 1, 2, 3],
           [5, 4, 3, 2, 1, 0, 7, 6],
           [6, 3, 4, 1, 2, 7, 0, 5],
           [7, 2, 1, 4, 3, 6, 5, 0]]
    return 1.0 / (1 - nu**2) * k[np.array(idx)]


def edofs(nelx, nely, elx, ely):
    # zero-based element (elx, ely); nodes numbered column-wise, nely+1 per column
    n1 = (nely + 1) * elx + ely
    n2 = (nely + 1) * (elx + 1) + ely
    return np.array([2*n1, 2*n1+1, 2*n2, 2*n2+1, 2*n2+2, 2*n2+3, 2*n1+2, 2*n1+3])


def fe(nelx, nely, x, penal):
    KE = lk()
    ndof = 2 * (nelx + 1) * (nely + 1)
    rows, cols, vals = [], [], []
    for elx in range(nelx):
        for ely in range(nely):
            ed = edofs(nelx, nely, elx, ely)
            ke = x[ely, elx] ** penal * KE
            rows.extend(np.repeat(ed, 8)); cols.extend(np.tile(ed, 8)); vals.extend(ke.ravel())
    K = coo_matrix((vals, (rows, cols)), shape=(ndof, ndof)).tocsc()
    F = np.zeros(ndof); F[1] = -1.0
    fixed = np.union1d(np.arange(0, 2*(nely+1), 2), [ndof - 1])
    free = np.setdiff1d(np.arange(ndof), fixed)
    U = np.zeros(ndof)
    U[free] = spsolve(K[free][:, free], F[free])
    return U, KE


def check(nelx, nely, rmin, x, dc):
    dcn = np.zeros_like(dc)
    for i in range(nelx):
        for j in range(nely):
            s = 0.0
            for k in range(max(i - int(np.floor(rmin)), 0), min(i + int(np.floor(rmin)) + 1, nelx)):
                for l in range(max(j - int(np.floor(rmin)), 0), min(j + int(np.floor(rmin)) + 1, nely)):
                    fac = rmin - np.sqrt((i - k)**2 + (j - l)**2)
                    s += max(0.0, fac)
                    dcn[j, i] += max(0.0, fac) * x[l, k] * dc[l, k]
            dcn[j, i] /= x[j, i] * s
    return dcn


def oc(nelx, nely, x, volfrac, dc, tight):
    l1, l2, move = 0.0, 100000.0, 0.2
    while True:
        if tight:
            if (l2 - l1) / (l1 + l2) <= 1e-13:
                break
        elif l2 - l1 <= 1e-4:
            break
        lmid = 0.5 * (l2 + l1)
        xnew = np.maximum(0.001, np.maximum(x - move, np.minimum(1.0, np.minimum(x + move, x * np.sqrt(-dc / lmid)))))
        if xnew.sum() - volfrac * nelx * nely > 0:
            l1 = lmid
        else:
            l2 = lmid
    return xnew


def top(nelx, nely, volfrac, penal, rmin, tight, max_iters=1000, trace=False):
    x = np.full((nely, nelx), volfrac)
    KE = lk()
    history = []
    change = 1.0
    it = 0
    first_x = None
    while change > 0.01 and it < max_iters:
        it += 1
        xold = x.copy()
        U, KE = fe(nelx, nely, x, penal)
        c = 0.0
        dc = np.zeros_like(x)
        for ely in range(nely):
            for elx in range(nelx):
                ue = U[edofs(nelx, nely, elx, ely)]
                e = ue @ KE @ ue
                c += x[ely, elx] ** penal * e
                dc[ely, elx] = -penal * x[ely, elx] ** (penal - 1) * e
        dc = check(nelx, nely, rmin, x, dc)
        x = oc(nelx, nely, x, volfrac, dc, tight)
        if first_x is None:
            first_x = x.copy()
        change = np.abs(x - xold).max()
        history.append(c)
        if trace:
            print(it, c, x.mean(), change)
    return history, x, first_x


if __name__ == "__main__":
    np.set_printoptions(precision=17)
    # uniform x=1 compliance on MBB 60x20
    U, KE = fe(60, 20, np.ones((20, 60)), 3.0)
    print("uniform_solid_compliance", repr(-U[1]))
    for tight in (False, True):
        hist, x, first = top(60, 20, 0.5, 3.0, 1.5, tight)
        print("tight" if tight else "classic", "iterations", len(hist))
        print("  c_initial", repr(hist[0]), "c_final", repr(hist[-1]))
        print("  first-iter x[0,0..4]", first[0, :5], "x[10,30]", repr(first[10, 30]))
        np.savetxt(f"/tmp/simp_first_x_{'tight' if tight else 'classic'}.txt", first, fmt="%.17g")
        np.savetxt(f"/tmp/simp_final_x_{'tight' if tight else 'classic'}.txt", x, fmt="%.17g")
        np.savetxt(f"/tmp/simp_hist_{'tight' if tight else 'classic'}.txt", np.array(hist), fmt="%.17g")
