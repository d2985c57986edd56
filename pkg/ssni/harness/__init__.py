# Datasets, classifiers, evaluation, timing, plots and ablations
