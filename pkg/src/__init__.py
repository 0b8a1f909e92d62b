# Simulator package
