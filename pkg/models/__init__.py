# Domain models: geometry, surfaces, alignment, chemistry, scoring and policy optimisation
