long frob_ioctl(void *f, unsigned int cmd, unsigned long arg)
{
	return cmd + arg;
}

/* frob_ioctl in a comment is not a use */
static long frob_dispatch(void *f, unsigned int cmd, unsigned long arg)
{
	return frob_ioctl(f, cmd, arg);
}
