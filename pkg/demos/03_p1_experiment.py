# coding: utf-8

# # A complete benchmark run on p1
#
# The bundled p1 experiment draws the dataset, learns a template with VSR,
# trains a linear network and a task-based network of no more parameters over
# ten seeds, and writes a markdown table plus a JSON archive.
# The same thing is available from the command line:
#
#     taskneuron bench --bundled p1 --out runs/p1

# In[1]:

from pathlib import Path

from taskneuron import bench


# In[2]:

config = bench.bundled_config("p1")
print([(arm.name, arm.kind, arm.structure) for arm in config.arms])


# Fewer repeats and epochs keep the demo short; drop these two lines for the full run.

# In[3]:

config.repeats = 3
config.train["epochs"] = 100


# In[4]:

report = bench.run_experiment(config)
print(bench.render_markdown(report))


# The archive holds everything except wall-clock timings, so rerunning the same
# config reproduces it byte for byte.

# In[5]:

out = bench.emit_report(report, Path("runs") / "p1-demo")
again = bench.emit_report(bench.run_experiment(config), Path("runs") / "p1-demo-again")
print((out / "archive.json").read_bytes() == (again / "archive.json").read_bytes())
