# Reneging equilibrium toolkit
