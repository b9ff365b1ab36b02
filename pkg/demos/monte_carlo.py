# A shortened version of the imbalanced-sites experiment: sites of
# 100, 100, 500, 1000 and 1000 subjects, 100 replications instead of 500.
#
# Things to look for in the table:
#   - pooled and fedrd_u rows are identical
#   - SE (model based) tracks SD (empirical) for the federated methods
#   - the two small sites on their own are very noisy

from fedrd.simulation import CONFIG_IMBALANCED, ScenarioConfig, run_monte_carlo

cfg = ScenarioConfig(scenario=1, site_sizes=CONFIG_IMBALANCED, reps=100, seed=2024)
report = run_monte_carlo(cfg)
print(report.to_text())

# CSV form, for further processing
with open("monte_carlo_report.csv", "w") as fh:
    fh.write(report.to_csv())
print("\nwrote monte_carlo_report.csv")
