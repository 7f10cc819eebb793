"""Regenerate the bundled example CSVs.

Both tables are synthetic: seeded draws whose marginals, feature types, and
headline model metrics are calibrated to the well-known recidivism and credit
tables of the same shapes (6907x7 and 1000x20).  Rerunning this script must
reproduce the committed files byte for byte; the seeds and coefficients below
are frozen and should not be edited casually.

Usage: python tools/regen_datasets.py [out_dir]
"""

import sys
from pathlib import Path

import numpy as np
import pandas as pd
import yaml

COMPAS_SEED = 20260816
GERMAN_SEED = 20260817

COMPAS_SCHEMA = {"label": "two_year_recid", "features": [
    {"name": "sex", "kind": "binary", "levels": ["Female", "Male"]},
    {"name": "age", "kind": "numeric"},
    {"name": "juv_fel_count", "kind": "numeric"},
    {"name": "juv_misd_count", "kind": "numeric"},
    {"name": "juv_other_count", "kind": "numeric"},
    {"name": "priors_count", "kind": "numeric"},
    {"name": "c_charge_degree", "kind": "binary", "levels": ["M", "F"]},
]}

GERMAN_SCHEMA = {"label": "class", "features": [
    {"name": "checking_status", "kind": "categorical", "levels": ["A11", "A12", "A13", "A14"]},
    {"name": "duration", "kind": "numeric"},
    {"name": "credit_history", "kind": "categorical", "levels": ["A30", "A31", "A32", "A33", "A34"]},
    {"name": "purpose", "kind": "categorical",
     "levels": ["A40", "A41", "A42", "A43", "A44", "A45", "A46", "A48", "A49", "A410"]},
    {"name": "credit_amount", "kind": "numeric"},
    {"name": "savings_status", "kind": "categorical", "levels": ["A61", "A62", "A63", "A64", "A65"]},
    {"name": "employment", "kind": "categorical", "levels": ["A71", "A72", "A73", "A74", "A75"]},
    {"name": "installment_commitment", "kind": "numeric"},
    {"name": "personal_status", "kind": "categorical", "levels": ["A91", "A92", "A93", "A94"]},
    {"name": "other_parties", "kind": "categorical", "levels": ["A101", "A102", "A103"]},
    {"name": "residence_since", "kind": "numeric"},
    {"name": "property_magnitude", "kind": "categorical", "levels": ["A121", "A122", "A123", "A124"]},
    {"name": "age", "kind": "numeric"},
    {"name": "other_payment_plans", "kind": "categorical", "levels": ["A141", "A142", "A143"]},
    {"name": "housing", "kind": "categorical", "levels": ["A151", "A152", "A153"]},
    {"name": "existing_credits", "kind": "numeric"},
    {"name": "job", "kind": "categorical", "levels": ["A171", "A172", "A173", "A174"]},
    {"name": "num_dependents", "kind": "numeric"},
    {"name": "own_telephone", "kind": "binary", "levels": ["A191", "A192"]},
    {"name": "foreign_worker", "kind": "binary", "levels": ["A201", "A202"]},
]}


def _tune_intercept(z, target_rate):
    lo, hi = -8.0, 8.0
    for _ in range(60):
        b0 = (lo + hi) / 2
        rate = (1 / (1 + np.exp(-(z + b0)))).mean()
        lo, hi = (b0, hi) if rate < target_rate else (lo, b0)
    return (lo + hi) / 2


def gen_compas(seed=COMPAS_SEED, n=6907, scale=0.9, w_priors=1.25, w_age=-0.45,
               w_juv=0.4, w_sex=0.18, w_charge=0.15, pos_rate=0.455):
    rng = np.random.default_rng(seed)
    sex = rng.choice(["Male", "Female"], n, p=[0.809, 0.191])
    age = np.clip(18 + rng.gamma(2.2, 6.3, n), 18, 83).round().astype(int)
    male = (sex == "Male").astype(float)
    # prior counts grow with age and are heavier for men
    lam = np.exp(0.55 + 0.25 * (age - 34) / 10.0 + 0.35 * male) * rng.gamma(1.0, 1.0, n)
    priors = rng.poisson(lam).astype(int)
    young = np.clip((30 - age) / 6.0, 0, None)
    juv_f = rng.poisson(0.04 * (1 + young)).astype(int)
    juv_m = rng.poisson(0.06 * (1 + young)).astype(int)
    juv_o = rng.poisson(0.08 * (1 + young)).astype(int)
    charge = rng.choice(["F", "M"], n, p=[0.644, 0.356])

    def std(v):
        v = v.astype(float)
        return (v - v.mean()) / v.std()

    z = scale * (w_priors * std(priors) + w_age * std(age)
                 + w_juv * (std(juv_f) + std(juv_m) + std(juv_o)) / 3
                 + w_sex * male + w_charge * (charge == "F").astype(float))
    b0 = _tune_intercept(z, pos_rate)
    y = (rng.random(n) < 1 / (1 + np.exp(-(z + b0)))).astype(int)
    return pd.DataFrame({
        "sex": sex, "age": age, "juv_fel_count": juv_f, "juv_misd_count": juv_m,
        "juv_other_count": juv_o, "priors_count": priors,
        "c_charge_degree": charge, "two_year_recid": y,
    })


def gen_german(seed=GERMAN_SEED, n=1000, base=(0.9, 0.5, -0.3, -1.9), scale=1.15,
               bad_rate=0.30):
    rng = np.random.default_rng(seed)
    checking = rng.choice(["A11", "A12", "A13", "A14"], n, p=[0.274, 0.269, 0.063, 0.394])
    duration = np.clip(rng.gamma(3.0, 7.0, n), 4, 72).round().astype(int)
    history = rng.choice(["A30", "A31", "A32", "A33", "A34"], n,
                         p=[0.040, 0.049, 0.530, 0.088, 0.293])
    purpose = rng.choice(["A40", "A41", "A42", "A43", "A44", "A45", "A46", "A48", "A49", "A410"],
                         n, p=[0.234, 0.103, 0.181, 0.280, 0.012, 0.022, 0.050, 0.009, 0.097, 0.012])
    amount = np.clip(np.exp(rng.normal(7.75, 0.75, n)), 250, 18500).round().astype(int)
    savings = rng.choice(["A61", "A62", "A63", "A64", "A65"], n,
                         p=[0.603, 0.103, 0.063, 0.048, 0.183])
    employment = rng.choice(["A71", "A72", "A73", "A74", "A75"], n,
                            p=[0.062, 0.172, 0.339, 0.174, 0.253])
    installment = rng.choice([1, 2, 3, 4], n, p=[0.136, 0.231, 0.157, 0.476])
    personal = rng.choice(["A91", "A92", "A93", "A94"], n, p=[0.050, 0.310, 0.548, 0.092])
    parties = rng.choice(["A101", "A102", "A103"], n, p=[0.907, 0.041, 0.052])
    residence = rng.choice([1, 2, 3, 4], n, p=[0.130, 0.308, 0.149, 0.413])
    prop = rng.choice(["A121", "A122", "A123", "A124"], n, p=[0.282, 0.232, 0.332, 0.154])
    age = np.clip(19 + rng.gamma(2.4, 7.0, n), 19, 75).round().astype(int)
    plans = rng.choice(["A141", "A142", "A143"], n, p=[0.139, 0.047, 0.814])
    housing = rng.choice(["A151", "A152", "A153"], n, p=[0.179, 0.713, 0.108])
    existing = rng.choice([1, 2, 3, 4], n, p=[0.633, 0.333, 0.028, 0.006])
    job = rng.choice(["A171", "A172", "A173", "A174"], n, p=[0.022, 0.200, 0.630, 0.148])
    dependents = rng.choice([1, 2], n, p=[0.845, 0.155])
    telephone = rng.choice(["A191", "A192"], n, p=[0.596, 0.404])
    foreign = rng.choice(["A201", "A202"], n, p=[0.963, 0.037])

    cmap = dict(zip(["A11", "A12", "A13", "A14"], base))
    z = np.array([cmap[c] for c in checking])
    z = z + scale * (0.35 * (duration - 21) / 12.0
                     + 0.25 * (np.log(amount) - 7.75) / 0.75
                     + 0.0)
    hmap = {"A30": 0.55, "A31": 0.45, "A32": 0.0, "A33": -0.10, "A34": -0.40}
    smap = {"A61": 0.25, "A62": 0.10, "A63": -0.10, "A64": -0.30, "A65": -0.20}
    emap = {"A71": 0.25, "A72": 0.15, "A73": 0.0, "A74": -0.10, "A75": -0.15}
    z = z + scale * (np.array([hmap[h] for h in history])
                     + np.array([smap[s] for s in savings])
                     + np.array([emap[e] for e in employment])
                     + 0.08 * (installment - 2.97)
                     + 0.18 * (plans == "A141").astype(float)
                     + 0.15 * (housing == "A151").astype(float)
                     - 0.12 * (age - 35.5) / 11.0
                     + 0.10 * (personal == "A91").astype(float))
    b0 = _tune_intercept(z, bad_rate)
    y = (rng.random(n) < 1 / (1 + np.exp(-(z + b0)))).astype(int)
    return pd.DataFrame({
        "checking_status": checking, "duration": duration, "credit_history": history,
        "purpose": purpose, "credit_amount": amount, "savings_status": savings,
        "employment": employment, "installment_commitment": installment,
        "personal_status": personal, "other_parties": parties,
        "residence_since": residence, "property_magnitude": prop, "age": age,
        "other_payment_plans": plans, "housing": housing,
        "existing_credits": existing, "job": job, "num_dependents": dependents,
        "own_telephone": telephone, "foreign_worker": foreign, "class": y,
    })


def main(out_dir=None):
    out = Path(out_dir) if out_dir else Path(__file__).resolve().parent.parent / "src" / "decision_sparsity" / "data"
    out.mkdir(parents=True, exist_ok=True)
    gen_compas().to_csv(out / "compas.csv", index=False)
    (out / "compas.schema.yaml").write_text(yaml.safe_dump(COMPAS_SCHEMA, sort_keys=False))
    gen_german().to_csv(out / "german_credit.csv", index=False)
    (out / "german_credit.schema.yaml").write_text(yaml.safe_dump(GERMAN_SCHEMA, sort_keys=False))
    print(f"wrote 4 files to {out}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else None)
