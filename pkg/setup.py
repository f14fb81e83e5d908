from setuptools import setup, find_packages

test_req = ["pytest>=7.0", "pytest-cov>=4.0", "coverage>=7.0", "black>=23.1"]

setup(
    name="effbench",
    version="0.1.0",
    description="Micro CNN engine and static cost analyzer for EffNet style blocks",
    author="effbench",
    author_email="",
    license="MIT",
    packages=find_packages(exclude=["tests", "tests.*"]),
    package_data={"effbench": ["specs/*.spec"]},
    python_requires=">=3.8",
    install_requires=["numpy>=1.24", "loguru>=0.7", "click>=8.0"],
    entry_points={"console_scripts": ["effbench=effbench.cli:main"]},
    tests_require=test_req,
    setup_requires=["pytest-runner>=6.0"],
    extras_require={"test": test_req},
    zip_safe=False,
)
