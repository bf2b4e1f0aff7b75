# db package
