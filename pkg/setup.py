from setuptools import setup, find_packages

with open("README.md") as f:
    readme = f.read()

setup(
    name="dcgnet",
    version="0.1.0",
    description="Graph convolution mesh recovery with adaptive adjacency and shape completion pretraining",
    long_description=readme,
    long_description_content_type="text/markdown",
    install_requires=["numpy", "pandas", "tabulate", "matplotlib", "scipy"],
    extras_require={"test": ["hypothesis"]},
    entry_points={"console_scripts": ["dcgnet=dcgnet.cli:main"]},
    packages=find_packages(exclude="tests"),
)
