# coding: utf-8

# # Public tabular data through the CSV path
#
# Any CSV with a header row works. This demo writes the diabetes and wine
# datasets from scikit-learn to CSV when it is installed and otherwise uses
# the copies shipped with the tests.

# In[1]:

from pathlib import Path

from taskneuron import bench

here = Path(__file__).resolve().parent
out_dir = here / "data"
out_dir.mkdir(exist_ok=True)


# In[2]:

def export(name):
    path = out_dir / f"{name}.csv"
    try:
        from sklearn import datasets
    except ImportError:
        return here.parent / "tests" / "data" / f"{name}.csv"
    if name == "diabetes":
        frame = datasets.load_diabetes(as_frame=True, scaled=False).frame
    else:
        bunch = datasets.load_wine(as_frame=True)
        frame = bunch.frame
        frame["target"] = [bunch.target_names[i] for i in bunch.target]
    frame.to_csv(path, index=False)
    return path


# Regression on diabetes: a 5-1 linear network against one task-based neuron.

# In[3]:

diabetes = bench.ExperimentConfig(
    "diabetes", {"csv": {"path": str(export("diabetes")), "target": "target"}},
    [{"name": "LN", "kind": "linear", "structure": "5-1"},
     {"name": "TN", "kind": "task_poly", "structure": "1", "activation": "sigmoid", "pair": "LN"}],
    gp={"preset": "desk"}, train={"epochs": 200}, repeats=3)
print(bench.render_markdown(bench.run_experiment(diabetes)))


# Three-class classification on wine, reported as test accuracy.

# In[4]:

wine = bench.ExperimentConfig(
    "wine", {"csv": {"path": str(export("wine")), "target": "target", "task": "classification"}},
    [{"name": "LN", "kind": "linear", "structure": "6-3"},
     {"name": "TN", "kind": "task_poly", "structure": "3", "activation": "sigmoid", "pair": "LN"}],
    gp={"preset": "desk"}, train={"epochs": 200}, repeats=3)
print(bench.render_markdown(bench.run_experiment(wine)))
