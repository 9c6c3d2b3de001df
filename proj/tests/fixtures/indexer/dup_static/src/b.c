static int helper(int x)
{
	return x * 2;
}

int use_b(void) { return helper(2); }
