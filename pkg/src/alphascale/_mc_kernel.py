"""Numba photon-transport kernel for a laterally infinite slab.

Coordinates: z = 0 is the front face (illumination side), z grows into
the slab, z = thickness is the rear face. Lengths are in cm.

Front-face next-event scoring launches every photon at the origin and
weights each contribution by the overlap of the illumination disk with
the detection disk shifted by the exit offset. By translation
invariance this is the launch-position average of the disk-launch,
position-checked estimator (``SCORE_ANALOG_FRONT``).
"""

import math

import numpy as np
from numba import njit, uint64

# rear-face boundary
REAR_AIR = 0
REAR_BLACK = 1
REAR_WHITE = 2

# scoring
SCORE_TOTAL_REAR = 0
SCORE_NEXT_EVENT_FRONT = 1
SCORE_ANALOG_FRONT = 2
SCORE_NEXT_EVENT_REAR = 3

W_MIN = 1e-4
CHANCE = 0.1
# exp(-40) ~ 4e-18: next-event terms below this are not evaluated
SKIP_OPTICAL_DEPTH = 40.0

T_LAUNCHED = 0
T_REFLECTED = 1
T_TRANSMITTED = 2
T_ABSORBED = 3
T_BACKING = 4
T_ROULETTE = 5
T_LOST = 6
T_EVENTS = 7
N_TALLIES = 8


@njit(cache=True, nogil=True, inline="always")
def _rotl(x, k):
    return (x << uint64(k)) | (x >> uint64(64 - k))


@njit(cache=True, nogil=True, inline="always")
def _uniform(st):
    """xoshiro256+ step; uniform double in [0, 1)."""
    s0, s1, s2, s3 = st[0], st[1], st[2], st[3]
    r = s0 + s3
    t = s1 << uint64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    st[0], st[1], st[2], st[3] = s0, s1, s2, _rotl(s3, 45)
    return (r >> uint64(11)) * (1.0 / 9007199254740992.0)


@njit(cache=True, nogil=True, inline="always")
def _azimuth(st):
    """(cos, sin) of a uniform azimuth, by rejection from the unit disk."""
    while True:
        u = 2.0 * _uniform(st) - 1.0
        v = 2.0 * _uniform(st) - 1.0
        q = u * u + v * v
        if 0.0 < q < 1.0:
            return (u * u - v * v) / q, 2.0 * u * v / q


@njit(cache=True, nogil=True)
def fresnel(n_in, n_out, cos_i):
    """Unpolarized Fresnel reflectance for light going from n_in into n_out."""
    if n_in == n_out:
        return 0.0
    if cos_i > 1.0:
        cos_i = 1.0
    sin_t2 = (n_in / n_out) ** 2 * (1.0 - cos_i * cos_i)
    if sin_t2 >= 1.0:
        return 1.0
    cos_t = math.sqrt(1.0 - sin_t2)
    rs = (n_in * cos_i - n_out * cos_t) / (n_in * cos_i + n_out * cos_t)
    rp = (n_in * cos_t - n_out * cos_i) / (n_in * cos_t + n_out * cos_i)
    return 0.5 * (rs * rs + rp * rp)


@njit(cache=True, nogil=True)
def disk_overlap(d, r1, r2):
    """Intersection area of two disks with radii r1, r2 and center distance d."""
    if d >= r1 + r2:
        return 0.0
    if d <= abs(r1 - r2):
        r = min(r1, r2)
        return math.pi * r * r
    a1 = (d * d + r1 * r1 - r2 * r2) / (2.0 * d * r1)
    a2 = (d * d + r2 * r2 - r1 * r1) / (2.0 * d * r2)
    a1 = min(1.0, max(-1.0, a1))
    a2 = min(1.0, max(-1.0, a2))
    k = (-d + r1 + r2) * (d + r1 - r2) * (d - r1 + r2) * (d + r1 + r2)
    return r1 * r1 * math.acos(a1) + r2 * r2 * math.acos(a2) - 0.5 * math.sqrt(max(0.0, k))


@njit(cache=True, nogil=True)
def _score_front(scores, row, c, ex, ey, radii, truncate, hit_rear, det_radius):
    d = math.sqrt(ex * ex + ey * ey)
    for s in range(radii.shape[0]):
        if truncate[s] and hit_rear:
            continue
        r_i = radii[s]
        scores[row, s] += c * disk_overlap(d, r_i, det_radius) / (math.pi * r_i * r_i)


@njit(cache=True, nogil=True)
def run_chunk(state, n_photons, sigma_a, sigma_s, thickness, n_rel, rear, rear_albedo,
              launch_diffuse, launch_sin_ext, launch_radius,
              score_mode, det_radius, radii, truncate,
              cone_cos_int, cone_cos_ext, max_events):
    st = state.copy()
    t_launched = t_reflected = t_transmitted = t_absorbed = 0.0
    t_backing = t_roulette = t_lost = t_events = 0.0
    n_scores = radii.shape[0]
    scores = np.zeros((n_photons, n_scores))
    sigma_t = sigma_a + sigma_s
    albedo = sigma_s / sigma_t if sigma_t > 0.0 else 0.0
    inv_sigma_t = 1.0 / sigma_t if sigma_t > 0.0 else 0.0
    frac_iso = 0.5 * (1.0 - cone_cos_int)            # isotropic scatter into the cone
    sin2_int = 1.0 - cone_cos_int * cone_cos_int      # Lambertian emission into the cone
    det_r2 = det_radius * det_radius
    n2 = n_rel * n_rel

    for i in range(n_photons):
        if launch_radius > 0.0:
            r = launch_radius * math.sqrt(_uniform(st))
            ca, sa_ = _azimuth(st)
            x = r * ca
            y = r * sa_
        else:
            x = 0.0
            y = 0.0
        if launch_diffuse:
            sin_e = math.sqrt(_uniform(st))
            cphi, sphi = _azimuth(st)
        else:
            sin_e = launch_sin_ext
            cphi, sphi = 1.0, 0.0
        cos_e = math.sqrt(1.0 - sin_e * sin_e)
        r0 = fresnel(1.0, n_rel, cos_e)
        t_launched += 1.0
        t_reflected += r0
        w = 1.0 - r0
        sin_t = sin_e / n_rel
        ux = sin_t * cphi
        uy = sin_t * sphi
        uz = math.sqrt(1.0 - sin_t * sin_t)
        z = 0.0
        scattered = False
        hit_rear = False
        events = 0

        while w > 0.0:
            if sigma_t > 0.0:
                s = -math.log(1.0 - _uniform(st)) * inv_sigma_t
                zn = z + uz * s
                crossing = zn <= 0.0 or zn >= thickness
            else:
                crossing = True

            if crossing:
                db = (thickness - z) / uz if uz > 0.0 else -z / uz
                x += ux * db
                y += uy * db
                if uz < 0.0:
                    z = 0.0
                    cos_i = -uz
                    rf = fresnel(n_rel, 1.0, cos_i)
                    esc = w * (1.0 - rf)
                    t_reflected += esc
                    if score_mode == SCORE_ANALOG_FRONT and esc > 0.0:
                        cos_x = math.sqrt(max(0.0, 1.0 - n2 * (1.0 - cos_i * cos_i)))
                        if cos_x >= cone_cos_ext and x * x + y * y <= det_r2:
                            if not (truncate[0] and hit_rear):
                                scores[i, 0] += esc
                    w *= rf
                    uz = -uz
                else:
                    z = thickness
                    if rear == REAR_AIR:
                        rf = fresnel(n_rel, 1.0, uz)
                        esc = w * (1.0 - rf)
                        t_transmitted += esc
                        if score_mode == SCORE_TOTAL_REAR:
                            scores[i, 0] += esc
                        elif score_mode == SCORE_NEXT_EVENT_REAR and not scattered:
                            cos_x = math.sqrt(max(0.0, 1.0 - n2 * (1.0 - uz * uz)))
                            if cos_x >= cone_cos_ext:
                                scores[i, 0] += esc
                        w *= rf
                        uz = -uz
                    elif rear == REAR_BLACK:
                        t_backing += w
                        w = 0.0
                    else:
                        hit_rear = True
                        t_backing += w * (1.0 - rear_albedo)
                        w *= rear_albedo
                        if score_mode == SCORE_NEXT_EVENT_FRONT and w > 0.0 \
                                and sigma_t * thickness < SKIP_OPTICAL_DEPTH:
                            # cosine-weighted direction inside the cone
                            cos_c = math.sqrt(1.0 - _uniform(st) * sin2_int)
                            path = thickness / cos_c
                            lat = math.sqrt(max(0.0, 1.0 - cos_c * cos_c)) * path
                            ca, sa_ = _azimuth(st)
                            c = sin2_int * w * math.exp(-sigma_t * path) * (1.0 - fresnel(n_rel, 1.0, cos_c))
                            _score_front(scores, i, c, x + lat * ca, y + lat * sa_,
                                         radii, truncate, hit_rear, det_radius)
                        sin_l = math.sqrt(_uniform(st))
                        ca, sa_ = _azimuth(st)
                        ux = sin_l * ca
                        uy = sin_l * sa_
                        uz = -math.sqrt(1.0 - sin_l * sin_l)
            else:
                x += ux * s
                y += uy * s
                z = zn
                t_absorbed += w * (1.0 - albedo)
                w *= albedo
                scattered = True
                if w > 0.0:
                    if score_mode == SCORE_NEXT_EVENT_FRONT:
                        if sigma_t * z < SKIP_OPTICAL_DEPTH:
                            cos_c = 1.0 - _uniform(st) * (1.0 - cone_cos_int)
                            path = z / cos_c
                            lat = math.sqrt(max(0.0, 1.0 - cos_c * cos_c)) * path
                            ca, sa_ = _azimuth(st)
                            c = frac_iso * w * math.exp(-sigma_t * path) * (1.0 - fresnel(n_rel, 1.0, cos_c))
                            _score_front(scores, i, c, x + lat * ca, y + lat * sa_,
                                         radii, truncate, hit_rear, det_radius)
                    elif score_mode == SCORE_NEXT_EVENT_REAR:
                        cos_c = 1.0 - _uniform(st) * (1.0 - cone_cos_int)
                        tr = 1.0 - fresnel(n_rel, 1.0, cos_c)
                        rr = 1.0 - tr if rear == REAR_AIR else 0.0
                        down = math.exp(-sigma_t * (thickness - z) / cos_c)
                        up = math.exp(-sigma_t * (z + thickness) / cos_c) * rr
                        loop = 1.0 - rr * rr * math.exp(-2.0 * sigma_t * thickness / cos_c)
                        scores[i, 0] += frac_iso * w * tr * (down + up) / loop
                    # isotropic direction (Marsaglia)
                    while True:
                        u = 2.0 * _uniform(st) - 1.0
                        v = 2.0 * _uniform(st) - 1.0
                        q = u * u + v * v
                        if q < 1.0:
                            break
                    f = 2.0 * math.sqrt(1.0 - q)
                    ux = u * f
                    uy = v * f
                    uz = 1.0 - 2.0 * q

            events += 1
            if w < W_MIN:
                if w <= 0.0:
                    break
                if _uniform(st) < CHANCE:
                    t_roulette += w * (1.0 / CHANCE - 1.0)
                    w /= CHANCE
                else:
                    t_roulette -= w
                    w = 0.0
                    break
            if events >= max_events:
                t_lost += w
                break
        t_events += events
    tallies = np.zeros(N_TALLIES)
    tallies[T_LAUNCHED] = t_launched
    tallies[T_REFLECTED] = t_reflected
    tallies[T_TRANSMITTED] = t_transmitted
    tallies[T_ABSORBED] = t_absorbed
    tallies[T_BACKING] = t_backing
    tallies[T_ROULETTE] = t_roulette
    tallies[T_LOST] = t_lost
    tallies[T_EVENTS] = t_events
    return tallies, scores
