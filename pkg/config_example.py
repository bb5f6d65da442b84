# Example sampling plan configuration
# You can use this as reference for testing the application

# Quality specification
AQL = 0.02
RQL = 0.05
ALPHA = 0.10  # global producer risk
ALPHA1 = 0.03  # stage-1 producer risk; stage 2 gets 1 - 0.9/0.97

# Production model and time-t0 sample size
MODEL = 1  # N(220, 4), 4 read as the variance
SAMPLE_SIZE = 250
REPS = 1000
SEED = 42

# Same settings as a key = value file for `app.py --config`
CONFIG_TEXT = f"""
# quality specification
aql = {AQL}
rql = {RQL}
alpha = {ALPHA}
alpha1 = {ALPHA1}

# estimator and design
method = kde-sj
dep = independent

# simulation
model = {MODEL}
m = {SAMPLE_SIZE}
reps = {REPS}
seed = {SEED}
"""

# Exact normal quantiles, AQL 2%, RQL 5%
EXACT_NORMAL_STAGE1 = {
    0.03: (85, 17.049715),
    0.07: (53, 13.463116),
}

# Reference plan distributions, model 1, m = 250
# (alpha1, alpha2, method) -> (E_n1, E_n2)
REFERENCE_TABLE = {
    (0.03, 0.0722, "kde-bcv"): (79.76, 18.33),
    (0.03, 0.0722, "kde-sj"): (82.13, 19.97),
    (0.07, 0.0323, "kde-bcv"): (49.29, 22.35),
    (0.07, 0.0323, "kde-sj"): (50.76, 23.85),
}
