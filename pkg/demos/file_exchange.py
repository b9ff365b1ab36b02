# Coordinator and sites as separate processes talking through a shared
# directory. Each message is one small text file; nothing else is shared.

import os
import subprocess
import sys
import tempfile

from fedrd import fit_pooled, save_dataset
from fedrd.simulation import ScenarioConfig, generate_sites

work = tempfile.mkdtemp(prefix="fedrd-demo-")
sites = generate_sites(ScenarioConfig(scenario=1, site_sizes=(200, 300, 500), seed=3), replication=0)
paths = []
for site in sites:
    paths.append(os.path.join(work, f"{site.site_id}.csv"))
    save_dataset(site, paths[-1])

cli = [sys.executable, "-m", "fedrd.cli"]
share = ["--carrier", "file", "--dir", os.path.join(work, "share"), "--study", "demo", "--method", "fedrd_u"]
coordinator = subprocess.Popen(cli + ["coordinate", *share, "--expect", str(len(paths))], stdout=subprocess.PIPE, text=True)
workers = [subprocess.Popen(cli + ["serve-site", *share, "--data", p, "--site-id", f"site{k + 1}"]) for k, p in enumerate(paths)]
out, _ = coordinator.communicate()
for w in workers:
    w.wait()

print(out)
print("pooled, for comparison:", fit_pooled(sites).beta)
print("\nmessages exchanged:")
for name in sorted(os.listdir(os.path.join(work, "share", "demo"))):
    print("  ", name)
