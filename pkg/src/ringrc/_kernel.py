"""Compiled RK4 stepper for the nonlinear add-drop ring with optional delayed feedback.

Everything here works on plain floats and arrays so numba can compile it;
the public wrappers live in :mod:`ringrc.mrr`. Complex amplitudes are
carried as (real, imag) pairs, which compiles to tighter code.
"""

import numpy as np
from numba import njit


@njit(cache=True, inline="always")
def _rhs(ur, ui, n, temp, er, ei, det0, fcd_shift, to_shift,
         gamma_lin, gamma_abs, a_tpa, a_fca, s, g_tpa, g_th, inv_tfc, inv_tth):
    p = ur * ur + ui * ui
    # angular detuning of the hot resonance from the laser
    delta = det0 + fcd_shift * n - to_shift * temp
    loss_nl = a_tpa * p + a_fca * n
    loss = gamma_lin + loss_nl
    dur = -delta * ui - loss * ur - s * er
    dui = delta * ur - loss * ui - s * ei
    dn = -n * inv_tfc + g_tpa * p * p
    dtemp = -temp * inv_tth + g_th * 2.0 * (gamma_abs + loss_nl) * p
    return dur, dui, dn, dtemp


@njit(cache=True)
def run_ring(e_in, hold, n_steps, dt, decim,
             det0, fcd_shift, to_shift, gamma_lin, gamma_abs, a_tpa, a_fca, s,
             g_tpa, g_th, tau_fc, tau_th,
             u0, n0, t0, fb_coeff, t_r, delay):
    """Integrate ``n_steps`` fixed RK4 steps.

    ``e_in[k // hold]`` is the zero-order-held input field for step ``k``.
    ``fb_coeff`` is sqrt(eta) * exp(-i phi); ``delay`` is the loop delay in
    steps. Samples are recorded every ``decim`` steps.

    Returns (u, n, T, e_th, e_drop, final_state, fail_step) where
    ``fail_step`` is -1 on success.
    """
    n_out = (n_steps + decim - 1) // decim
    out_u = np.zeros(n_out, dtype=np.complex128)
    out_n = np.zeros(n_out)
    out_t = np.zeros(n_out)
    out_th = np.zeros(n_out, dtype=np.complex128)
    out_dr = np.zeros(n_out, dtype=np.complex128)
    inv_tfc = 1.0 / tau_fc
    inv_tth = 1.0 / tau_th
    use_fb = fb_coeff != 0.0
    cr = fb_coeff.real
    ci = fb_coeff.imag
    hist_len = delay + 1 if use_fb else 1
    hist_r = np.zeros(hist_len)
    hist_i = np.zeros(hist_len)
    h = 0.5 * dt
    w = dt / 6.0

    ur = u0.real
    ui = u0.imag
    n = n0
    temp = t0
    fail = -1
    for k in range(n_steps):
        e = e_in[k // hold]
        er = e.real
        ei = e.imag
        thr = t_r * er + s * ur
        thi = t_r * ei + s * ui
        a0r = 0.0
        a0i = 0.0
        a1r = 0.0
        a1i = 0.0
        if use_fb:
            hist_r[k % hist_len] = thr
            hist_i[k % hist_len] = thi
            if delay > 0:
                if k >= delay:
                    j = (k - delay) % hist_len
                    a0r = cr * hist_r[j] - ci * hist_i[j]
                    a0i = cr * hist_i[j] + ci * hist_r[j]
                if k + 1 >= delay:
                    j = (k + 1 - delay) % hist_len
                    a1r = cr * hist_r[j] - ci * hist_i[j]
                    a1i = cr * hist_i[j] + ci * hist_r[j]
            else:
                a0r = cr * thr - ci * thi
                a0i = cr * thi + ci * thr
        if k % decim == 0:
            j = k // decim
            out_u[j] = complex(ur, ui)
            out_n[j] = n
            out_t[j] = temp
            out_th[j] = complex(thr, thi)
            out_dr[j] = complex(s * ur + t_r * a0r, s * ui + t_r * a0i)

        if use_fb and delay == 0:
            # instantaneous loop: the add field follows each stage state
            ar = cr * (t_r * er + s * ur) - ci * (t_r * ei + s * ui)
            ai = cr * (t_r * ei + s * ui) + ci * (t_r * er + s * ur)
            k1r, k1i, k1n, k1t = _rhs(ur, ui, n, temp, er + ar, ei + ai, det0, fcd_shift, to_shift,
                                      gamma_lin, gamma_abs, a_tpa, a_fca, s, g_tpa, g_th, inv_tfc, inv_tth)
            xr = ur + h * k1r
            xi = ui + h * k1i
            ar = cr * (t_r * er + s * xr) - ci * (t_r * ei + s * xi)
            ai = cr * (t_r * ei + s * xi) + ci * (t_r * er + s * xr)
            k2r, k2i, k2n, k2t = _rhs(xr, xi, n + h * k1n, temp + h * k1t, er + ar, ei + ai,
                                      det0, fcd_shift, to_shift, gamma_lin, gamma_abs, a_tpa, a_fca,
                                      s, g_tpa, g_th, inv_tfc, inv_tth)
            xr = ur + h * k2r
            xi = ui + h * k2i
            ar = cr * (t_r * er + s * xr) - ci * (t_r * ei + s * xi)
            ai = cr * (t_r * ei + s * xi) + ci * (t_r * er + s * xr)
            k3r, k3i, k3n, k3t = _rhs(xr, xi, n + h * k2n, temp + h * k2t, er + ar, ei + ai,
                                      det0, fcd_shift, to_shift, gamma_lin, gamma_abs, a_tpa, a_fca,
                                      s, g_tpa, g_th, inv_tfc, inv_tth)
            xr = ur + dt * k3r
            xi = ui + dt * k3i
            ar = cr * (t_r * er + s * xr) - ci * (t_r * ei + s * xi)
            ai = cr * (t_r * ei + s * xi) + ci * (t_r * er + s * xr)
            k4r, k4i, k4n, k4t = _rhs(xr, xi, n + dt * k3n, temp + dt * k3t, er + ar, ei + ai,
                                      det0, fcd_shift, to_shift, gamma_lin, gamma_abs, a_tpa, a_fca,
                                      s, g_tpa, g_th, inv_tfc, inv_tth)
        else:
            # delayed add field: endpoints from the buffer, midpoint interpolated
            amr = 0.5 * (a0r + a1r)
            ami = 0.5 * (a0i + a1i)
            k1r, k1i, k1n, k1t = _rhs(ur, ui, n, temp, er + a0r, ei + a0i, det0, fcd_shift, to_shift,
                                      gamma_lin, gamma_abs, a_tpa, a_fca, s, g_tpa, g_th, inv_tfc, inv_tth)
            k2r, k2i, k2n, k2t = _rhs(ur + h * k1r, ui + h * k1i, n + h * k1n, temp + h * k1t,
                                      er + amr, ei + ami, det0, fcd_shift, to_shift,
                                      gamma_lin, gamma_abs, a_tpa, a_fca, s, g_tpa, g_th, inv_tfc, inv_tth)
            k3r, k3i, k3n, k3t = _rhs(ur + h * k2r, ui + h * k2i, n + h * k2n, temp + h * k2t,
                                      er + amr, ei + ami, det0, fcd_shift, to_shift,
                                      gamma_lin, gamma_abs, a_tpa, a_fca, s, g_tpa, g_th, inv_tfc, inv_tth)
            k4r, k4i, k4n, k4t = _rhs(ur + dt * k3r, ui + dt * k3i, n + dt * k3n, temp + dt * k3t,
                                      er + a1r, ei + a1i, det0, fcd_shift, to_shift,
                                      gamma_lin, gamma_abs, a_tpa, a_fca, s, g_tpa, g_th, inv_tfc, inv_tth)
        ur += w * (k1r + 2.0 * k2r + 2.0 * k3r + k4r)
        ui += w * (k1i + 2.0 * k2i + 2.0 * k3i + k4i)
        n += w * (k1n + 2.0 * k2n + 2.0 * k3n + k4n)
        temp += w * (k1t + 2.0 * k2t + 2.0 * k3t + k4t)
        # flush amplitudes far below any physical level; denormals are very slow
        if abs(ur) < 1e-150:
            ur = 0.0
        if abs(ui) < 1e-150:
            ui = 0.0
        if not (np.isfinite(ur) and np.isfinite(ui) and np.isfinite(n) and np.isfinite(temp)):
            fail = k
            break

    final = np.empty(3, dtype=np.complex128)
    final[0] = complex(ur, ui)
    final[1] = n
    final[2] = temp
    return out_u, out_n, out_t, out_th, out_dr, final, fail
