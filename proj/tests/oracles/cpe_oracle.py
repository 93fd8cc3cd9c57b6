#!/usr/bin/env python3
"""Independent oracle for the cyclic positional encoding.

Evaluates the closed-form schedule and embedding in double precision with
numpy only, prints reference values that are frozen into test_cpe.cpp.
Run: python3 cpe_oracle.py
"""
import math

import numpy as np


def wavelengths(n: int, dim: int) -> np.ndarray:
    half = dim // 2
    base = n ** (1.0 / half)
    lam = np.empty(dim)
    for d in range(dim):
        if d < half:
            lam[d] = ((3 * (d // 3) + 1) / dim) * (n - base) + base
        else:
            lam[d] = float(n)
    return lam


def cpe_row(i: int, n: int, lam: np.ndarray) -> np.ndarray:
    out = np.empty(lam.size)
    for d, l in enumerate(lam):
        # ceil term short-circuits to 1 when l == n (z becomes exactly i)
        ceil_term = 1.0 if l == n else math.ceil(n / l)
        z = (i / n) * l * ceil_term
        arg = (2.0 * math.pi / l) * abs(math.fmod(z, 2.0 * l) - l)
        out[d] = math.sin(arg) if d % 2 == 0 else math.cos(arg)
    return out


def abs_pe_row(i: int, dim: int) -> np.ndarray:
    out = np.empty(dim)
    for d in range(dim):
        freq = 1.0 / (10000.0 ** ((d // 2 * 2) / dim))
        out[d] = math.sin(i * freq) if d % 2 == 0 else math.cos(i * freq)
    return out


def main() -> None:
    n, dim = 20, 64
    lam = wavelengths(n, dim)
    print(f"lambda_0 (N=20, dim=64) = {lam[0]:.15f}")
    print(f"lambda_31               = {lam[31]:.15f}")
    print(f"lambda_32               = {lam[32]:.15f}")
    print(f"base N^(1/32)           = {20 ** (1 / 32):.15f}")

    g = np.stack([cpe_row(i, n, lam) for i in range(n)])
    assert np.all(np.abs(g) <= 1.0 + 1e-12)
    d01 = float(g[0] @ g[1])
    d0_10 = float(g[0] @ g[10])
    d0_19 = float(g[0] @ g[19])
    print(f"cpe dot(g0,g1)  = {d01:.12f}")
    print(f"cpe dot(g0,g10) = {d0_10:.12f}")
    print(f"cpe dot(g0,g19) = {d0_19:.12f}")
    print(f"head-tail rel gap |d01-d0_19|/|d01| = {abs(d01 - d0_19) / abs(d01):.12f}")

    a = np.stack([abs_pe_row(i, dim) for i in range(n)])
    print(f"abspe dot(a0,a1)  = {float(a[0] @ a[1]):.12f}")
    print(f"abspe dot(a0,a10) = {float(a[0] @ a[10]):.12f}")
    print(f"abspe dot(a0,a19) = {float(a[0] @ a[19]):.12f}")

    # sign-change counts per column for N=16: should be non-increasing with d
    # (longer wavelength at higher dims -> slower oscillation)
    g16 = np.stack([cpe_row(i, 16, wavelengths(16, dim)) for i in range(16)])
    changes = []
    for d in range(dim):
        col = g16[:, d]
        s = np.sign(np.where(np.abs(col) < 1e-12, 0.0, col))
        nz = s[s != 0]
        changes.append(int(np.sum(nz[1:] != nz[:-1])))
    print(f"n16 sign changes col0,col1,col30,col63 = "
          f"{changes[0]} {changes[1]} {changes[30]} {changes[63]}")
    groups_of_three = [changes[3 * k:3 * k + 3] for k in range(dim // 3)]
    print(f"n16 per-column sign changes = {changes}")
    assert all(max(t) <= 2 * 16 for t in groups_of_three)


if __name__ == "__main__":
    main()
