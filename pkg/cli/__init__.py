# Command-line surface of the ShapeLinker engine
